use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::client::{ClientState, Participant};
use super::eta::choose_eta;
use super::messages::GlobalModelNoised;
use super::oracle::{aggregate_plain, project_plain};
use super::select_clients;
use super::server::ServerState;
use crate::config::{Backend, DataConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::fe::{PublicKey, Scheme};
use crate::fixedpoint::FixedPointCodec;
use crate::ml::{dirichlet_partition, evaluate, generate_synthetic, load_csv, LabeledDataset, Metrics, Model, PartitionSpec};
use crate::numtheory::{random_below, setup_group, GroupParams, PlaintextBound};
use crate::par;
use crate::rng::{stream, subseed};
use crate::robust::{assignment_agreement, ClusterReport};

/// Everything a run needs before the first round: data, partitions, the
/// malicious set, and the initial model.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub partitions: Vec<LabeledDataset>,
    pub malicious: Vec<bool>,
    pub initial: Model,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let seed = config.seed;
    let (train, test) = match &config.data {
        DataConfig::Synthetic {
            n_samples,
            n_classes,
            n_features,
            separation,
        } => generate_synthetic(*n_samples, *n_classes, *n_features, *separation, subseed(seed, "data", &[])),
        DataConfig::Csv { train, test, n_classes } => {
            let tr = load_csv(train, Some(*n_classes))?;
            let te = load_csv(test, Some(*n_classes))?;
            if tr.n_features != te.n_features {
                return Err(Error::config("data.test", "feature count differs from the training set"));
            }
            (tr, te)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = config.layer_dims(train.n_features);
    config.validate_capacity(config.param_count(train.n_features))?;
    let partitions = dirichlet_partition(
        &train,
        &PartitionSpec {
            alpha: config.federation.alpha,
            n_clients: config.federation.clients,
            seed: subseed(seed, "partition", &[]),
        },
    );
    let malicious = config.attack.malicious_mask(config.federation.clients);
    let initial = Model::mlp(&dims, &mut stream(seed, "init", &[]));
    Ok(Prepared {
        config: config.clone(),
        train,
        test,
        partitions,
        malicious,
        initial,
    })
}

impl Prepared {
    fn participants(&self) -> Vec<Participant> {
        self.partitions
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Participant::new(
                    i as u32 + 1,
                    d.clone(),
                    self.config.attack,
                    self.malicious[i],
                    self.initial.clone(),
                )
            })
            .collect()
    }

    fn evaluate(&self, model: &Model) -> Result<Metrics> {
        evaluate(model, &self.test, self.config.attack.l_src, self.config.attack.l_tar)
    }
}

/// Wall-clock seconds per phase of a round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub train: f64,
    pub encrypt: f64,
    pub keygen: f64,
    pub project: f64,
    pub cluster: f64,
    pub aggregate: f64,
    pub restore: f64,
}

impl PhaseTimes {
    pub const NAMES: [&'static str; 7] = ["train", "encrypt", "keygen", "project", "cluster", "aggregate", "restore"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.train,
            self.encrypt,
            self.keygen,
            self.project,
            self.cluster,
            self.aggregate,
            self.restore,
        ]
    }
}

/// Clustering of the noise-free projections, for comparison with the
/// clustering the server actually performed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceProbe {
    pub clean_assignments: Vec<usize>,
    pub agreement: f64,
}

/// One evaluated model. Record 0 is the initial model; record `t + 1` is
/// the result of protocol round `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub metrics: Metrics,
    pub gamma: Vec<u8>,
    pub n_selected: usize,
    pub malicious_selected: usize,
    pub clipped: usize,
    pub cluster_report: Option<ClusterReport>,
    pub projections: Vec<Vec<f64>>,
    pub probe: Option<InvarianceProbe>,
    pub wall_times: PhaseTimes,
}

impl RoundRecord {
    fn initial(metrics: Metrics) -> Self {
        RoundRecord {
            round: 0,
            metrics,
            gamma: Vec::new(),
            n_selected: 0,
            malicious_selected: 0,
            clipped: 0,
            cluster_report: None,
            projections: Vec::new(),
            probe: None,
            wall_times: PhaseTimes::default(),
        }
    }

    pub fn rejected_cluster_size(&self) -> usize {
        self.cluster_report.as_ref().map_or(0, |r| r.rejected_size())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub eta: Option<i64>,
    pub group_bits: Option<u64>,
    pub records: Vec<RoundRecord>,
}

impl RunReport {
    pub fn final_metrics(&self) -> Metrics {
        self.records.last().expect("a run always has its initial record").metrics
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub config: ExperimentConfig,
    /// Which clients were attackers, by index.
    pub malicious: Vec<bool>,
    pub srfed: RunReport,
    pub fedavg: Option<RunReport>,
}

enum Engine {
    Encrypted {
        scheme: Arc<Scheme>,
        server: Box<ServerState>,
        clients: Vec<ClientState>,
    },
    Plaintext {
        global: GlobalModelNoised,
        clients: Vec<Participant>,
    },
}

impl Engine {
    fn participants(&self) -> Vec<&Participant> {
        match self {
            Engine::Encrypted { clients, .. } => clients.iter().map(|c| &c.participant).collect(),
            Engine::Plaintext { clients, .. } => clients.iter().collect(),
        }
    }

    fn participants_mut(&mut self) -> Vec<&mut Participant> {
        match self {
            Engine::Encrypted { clients, .. } => clients.iter_mut().map(|c| &mut c.participant).collect(),
            Engine::Plaintext { clients, .. } => clients.iter_mut().collect(),
        }
    }

    fn global(&self) -> &GlobalModelNoised {
        match self {
            Engine::Encrypted { server, .. } => server.global(),
            Engine::Plaintext { global, .. } => global,
        }
    }
}

fn elapsed(clock: &mut Instant) -> f64 {
    let s = clock.elapsed().as_secs_f64();
    *clock = Instant::now();
    s
}

/// An SRFed run in progress, advanced one round at a time.
pub struct Simulation<'a> {
    prepared: &'a Prepared,
    codec: FixedPointCodec,
    layout: Vec<Range<usize>>,
    eta: i64,
    engine: Engine,
    round: u64,
    local_models: Vec<Model>,
}

impl<'a> Simulation<'a> {
    pub fn new(prepared: &'a Prepared) -> Result<Self> {
        let cfg = &prepared.config;
        let seed = cfg.seed;
        let zeta = prepared.initial.param_count();
        let layout = prepared.initial.group_ranges();
        let mut participants = prepared.participants();

        let (codec, scheme) = match cfg.backend {
            Backend::Encrypted => {
                let params = setup_group(cfg.group.bits, &mut stream(seed, "crypto", &[]))?;
                let bound = PlaintextBound::new(params.n(), cfg.bound_dimension(zeta))?;
                let codec = FixedPointCodec::new(cfg.group.scale_bits, &bound);
                (codec, Some(Arc::new(Scheme::new(params, bound))))
            }
            Backend::Plaintext => (
                FixedPointCodec::with_limit(cfg.group.scale_bits, cfg.nominal_codec_limit(zeta)?),
                None,
            ),
        };
        let (init_enc, _) = codec.encode_all(&prepared.initial.flatten());
        let initial = GlobalModelNoised::initial(&init_enc);

        // client 1 picks the perturbation and shares it with its peers
        let eta = choose_eta(&prepared.initial, &codec, cfg.defense.eta_ratio, seed)?;
        for p in &mut participants {
            p.receive_eta(eta);
        }

        let engine = match scheme {
            Some(scheme) => {
                let sigma = cfg.group.sigma_bits;
                let keypairs = par::collect_results(par::map_range(participants.len(), |i| {
                    scheme.keygen(i as u32 + 1, &mut stream(seed, "keygen", &[i as u64 + 1]), sigma)
                }))?;
                let pks: Vec<PublicKey> = keypairs.iter().map(|k| k.public().clone()).collect();
                let eta_0 = random_below(&mut stream(seed, "eta0", &[]), &scheme.bound.m);
                let chain = scheme.noise_chain(eta_0);
                let mut clients: Vec<ClientState> = participants
                    .into_iter()
                    .zip(keypairs)
                    .map(|(p, kp)| ClientState::new(p, kp, chain.clone()))
                    .collect();
                par::map_mut(&mut clients, |c| c.establish(&scheme.params, &pks));
                for c in &mut clients {
                    c.receive_global(&initial, &codec)?;
                }
                let server = ServerState::new(
                    scheme.clone(),
                    codec,
                    pks,
                    layout.clone(),
                    initial,
                    cfg.defense,
                    seed,
                );
                Engine::Encrypted {
                    scheme,
                    server: Box::new(server),
                    clients,
                }
            }
            None => {
                for p in &mut participants {
                    p.receive_global(&initial, &codec)?;
                }
                Engine::Plaintext {
                    global: initial,
                    clients: participants,
                }
            }
        };
        Ok(Simulation {
            prepared,
            codec,
            layout,
            eta,
            engine,
            round: 0,
            local_models: Vec::new(),
        })
    }

    pub fn eta(&self) -> i64 {
        self.eta
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn group(&self) -> Option<&GroupParams> {
        match &self.engine {
            Engine::Encrypted { scheme, .. } => Some(&scheme.params),
            Engine::Plaintext { .. } => None,
        }
    }

    /// The aggregator's current (noised) model.
    pub fn global(&self) -> &GlobalModelNoised {
        self.engine.global()
    }

    /// The clients' current de-noised model.
    pub fn model(&self) -> &Model {
        self.engine.participants()[0].model()
    }

    /// Local models produced in the most recent round, before encoding.
    pub fn local_models(&self) -> &[Model] {
        &self.local_models
    }

    pub fn initial_record(&self) -> Result<RoundRecord> {
        Ok(RoundRecord::initial(self.prepared.evaluate(self.model())?))
    }

    /// Execute one full protocol round and evaluate the resulting model.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let cfg = &self.prepared.config;
        let rounds = cfg.federation.rounds;
        if self.round >= rounds {
            return Err(Error::Malformed(format!("all {rounds} rounds already ran")));
        }
        let t = self.round;
        let last = t + 1 == rounds;
        let seed = cfg.seed;
        let zeta = self.layout.last().map_or(0, |r| r.end);
        let codec = self.codec;
        let layout = &self.layout;
        let mut times = PhaseTimes::default();
        let start_model = self.model().clone();
        let view = self.engine.global().clone();

        let mut clock = Instant::now();
        {
            let mut ps = self.engine.participants_mut();
            par::collect_results(par::map_mut(&mut ps, |p| p.train(&cfg.training, seed, t)))?;
        }
        times.train = elapsed(&mut clock);
        self.local_models = self.engine.participants().iter().map(|p| p.model().clone()).collect();

        let (projections, report, new_global, clipped) = match &mut self.engine {
            Engine::Encrypted { scheme, server, clients } => {
                let uploads =
                    par::collect_results(par::map_mut(clients, |c| c.upload(scheme, &codec, t, last)))?;
                let clipped = uploads.iter().map(|u| u.1).sum();
                let updates: Vec<_> = uploads.into_iter().map(|u| u.0).collect();
                times.encrypt = elapsed(&mut clock);
                let keys = par::collect_results(par::map(clients, |c| c.projection_keys(scheme, &view, layout, t)))?;
                times.keygen = elapsed(&mut clock);
                let projections = server.project(&updates, &keys)?;
                times.project = elapsed(&mut clock);
                let (report, gamma) = server.select(&projections)?;
                times.cluster = elapsed(&mut clock);
                let partials = par::collect_results(par::map(clients, |c| c.partial_key(scheme, &gamma, zeta)))?;
                times.keygen += elapsed(&mut clock);
                let new_global = server.aggregate(&updates, &partials, &gamma)?;
                times.aggregate = elapsed(&mut clock);
                par::collect_results(par::map_mut(clients, |c| c.receive_global(&new_global, &codec)))?;
                times.restore = elapsed(&mut clock);
                (projections, report, new_global, clipped)
            }
            Engine::Plaintext { global, clients } => {
                let encoded = par::map_mut(clients, |p| p.noised_encoding(&codec, last));
                let clipped = encoded.iter().map(|e| e.1).sum();
                let noised: Vec<Vec<i64>> = encoded.into_iter().map(|e| e.0).collect();
                times.encrypt = elapsed(&mut clock);
                let projections = project_plain(&noised, &view.encoded(), layout, &codec, t)?;
                times.project = elapsed(&mut clock);
                let points: Vec<Vec<f64>> = projections.iter().map(|p| p.values.clone()).collect();
                let report = select_clients(&points, &cfg.defense, seed, t)?;
                times.cluster = elapsed(&mut clock);
                *global = aggregate_plain(&noised, &report.benign_mask, t)?;
                times.aggregate = elapsed(&mut clock);
                let g = global.clone();
                par::collect_results(par::map_mut(clients, |p| p.receive_global(&g, &codec)))?;
                times.restore = elapsed(&mut clock);
                (projections, report, g, clipped)
            }
        };
        debug_assert_eq!(new_global.round, t + 1);
        self.round += 1;

        let points: Vec<Vec<f64>> = projections.into_iter().map(|p| p.values).collect();
        let probe = if cfg.defense.probe_invariance && cfg.defense.enabled {
            Some(self.probe(&start_model, &report, t)?)
        } else {
            None
        };
        let gamma = report.benign_mask.clone();
        let malicious_selected = gamma
            .iter()
            .zip(&self.prepared.malicious)
            .filter(|(&g, &m)| g == 1 && m)
            .count();
        let metrics = self.prepared.evaluate(self.model())?;
        log::info!(
            "round {}: oa {:.4} selected {}/{} (malicious {})",
            t + 1,
            metrics.oa,
            gamma.iter().filter(|&&g| g == 1).count(),
            gamma.len(),
            malicious_selected
        );
        Ok(RoundRecord {
            round: t + 1,
            metrics,
            n_selected: new_global.divisor as usize,
            gamma,
            malicious_selected,
            clipped,
            cluster_report: cfg.defense.enabled.then_some(report),
            projections: points,
            probe,
            wall_times: times,
        })
    }

    /// Cluster the projections of the clean local models onto the clean
    /// global model with the same seed, and compare.
    fn probe(&self, start: &Model, noised: &ClusterReport, t: u64) -> Result<InvarianceProbe> {
        let cfg = &self.prepared.config;
        let (clean_view, _) = self.codec.encode_all(&start.flatten());
        let clean: Vec<Vec<i64>> = self.local_models.iter().map(|m| self.codec.encode_all(&m.flatten()).0).collect();
        let projections = project_plain(&clean, &clean_view, &self.layout, &self.codec, t)?;
        let points: Vec<Vec<f64>> = projections.into_iter().map(|p| p.values).collect();
        let report = select_clients(&points, &cfg.defense, cfg.seed, t)?;
        Ok(InvarianceProbe {
            agreement: assignment_agreement(&noised.assignments, &report.assignments, cfg.defense.k),
            clean_assignments: report.assignments,
        })
    }
}

/// Run every round of the defended protocol.
pub fn run_srfed(prepared: &Prepared) -> Result<RunReport> {
    let mut sim = Simulation::new(prepared)?;
    let mut records = vec![sim.initial_record()?];
    for _ in 0..prepared.config.federation.rounds {
        records.push(sim.run_round()?);
    }
    Ok(RunReport {
        label: "srfed".into(),
        eta: Some(sim.eta()),
        group_bits: sim.group().map(|g| g.bit_length()),
        records,
    })
}

/// Undefended plaintext FedAvg over the same clients, data and attacks.
pub fn run_fedavg(prepared: &Prepared) -> Result<RunReport> {
    let cfg = &prepared.config;
    let mut participants = prepared.participants();
    let clients = participants.len();
    let mut global = prepared.initial.clone();
    let mut records = vec![RoundRecord::initial(prepared.evaluate(&global)?)];
    for t in 0..cfg.federation.rounds {
        let mut times = PhaseTimes::default();
        let mut clock = Instant::now();
        par::collect_results(par::map_mut(&mut participants, |p| {
            p.set_model(global.clone());
            p.train(&cfg.training, cfg.seed, t)
        }))?;
        times.train = elapsed(&mut clock);
        let mut mean = vec![0.0; global.param_count()];
        for p in &participants {
            for (m, v) in mean.iter_mut().zip(p.model().flatten()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= clients as f64;
        }
        global = global.with_params(&mean)?;
        times.aggregate = elapsed(&mut clock);
        let metrics = prepared.evaluate(&global)?;
        log::info!("fedavg round {}: oa {:.4}", t + 1, metrics.oa);
        records.push(RoundRecord {
            round: t + 1,
            metrics,
            gamma: vec![1; clients],
            n_selected: clients,
            malicious_selected: prepared.malicious.iter().filter(|&&m| m).count(),
            clipped: 0,
            cluster_report: None,
            projections: Vec::new(),
            probe: None,
            wall_times: times,
        });
    }
    Ok(RunReport {
        label: "fedavg".into(),
        eta: None,
        group_bits: None,
        records,
    })
}

/// Prepare, run the defended protocol, and the control when requested.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let prepared = prepare(config)?;
    let srfed = run_srfed(&prepared)?;
    let fedavg = if config.control_fedavg {
        Some(run_fedavg(&prepared)?)
    } else {
        None
    };
    Ok(ExperimentReport {
        version: crate::VERSION.to_string(),
        config: config.for_header(),
        malicious: prepared.malicious.clone(),
        srfed,
        fedavg,
    })
}
