use rayon::prelude::*;

use super::aggregate::{aggregate_adaptive, aggregate_fedavg, ServerState};
use super::client::{client_seed, local_update, ClientState, Origin, Snapshot};
use super::store::{ClientCheckpoint, SnapshotStore};
use super::{FederationConfig, Strategy};
use crate::error::{invalid, Result};
use crate::model::FusionConfig;
use crate::numerics::{ParamVector, Profile};
use crate::training::{train_epochs, Optimizer};

/// The model a client deploys after federation.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub client_id: usize,
    pub params: ParamVector,
    /// The chosen snapshot under adaptive selection.
    pub snapshot: Option<Snapshot>,
}

#[derive(Debug, Clone)]
pub struct Federation {
    pub config: FederationConfig,
    pub model: FusionConfig,
    pub global: ParamVector,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    /// Completed rounds.
    pub round: usize,
}

impl Federation {
    /// Clients must carry ids `0..M` in order.
    pub fn new(config: FederationConfig, model: FusionConfig, clients: Vec<ClientState>, init: ParamVector) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        if clients.len() != config.clients {
            return Err(invalid(format!("expected {} clients, got {}", config.clients, clients.len())));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.client_id != i {
                return Err(invalid("client ids must be 0..M in order"));
            }
            init.check_len(&c.params)?;
        }
        let server = ServerState::new(init.len());
        Ok(Self { config, model, global: init, server, clients, round: 0 })
    }

    /// One full round: local training, aggregation, global evaluation.
    pub fn run_round(&mut self) -> Result<()> {
        if self.round >= self.config.rounds {
            return Err(invalid(format!("all {} rounds already completed", self.config.rounds)));
        }
        let r = self.round + 1;
        let (global, cfg, model) = (&self.global, &self.config, &self.model);
        let updates = self
            .clients
            .par_iter_mut()
            .map(|c| local_update(c, global, r, cfg, model))
            .collect::<Result<Vec<_>>>()?;
        let mut next = match cfg.aggregator.adaptive_kind() {
            None => aggregate_fedavg(global, &updates)?,
            Some(kind) => aggregate_adaptive(global, &updates, &mut self.server, kind, &cfg.server)?,
        };
        if cfg.profile == Profile::Run {
            next.quantize_f32();
        }
        self.clients
            .par_iter_mut()
            .map(|c| c.record(r, Origin::Global, &next, model).map(|_| ()))
            .collect::<Result<Vec<_>>>()?;
        self.global = next;
        self.round = r;
        log::debug!("round {r} done");
        Ok(())
    }

    /// Run the remaining rounds, persisting each one when a store is given.
    pub fn run(&mut self, mut store: Option<&mut SnapshotStore>) -> Result<()> {
        while self.round < self.config.rounds {
            self.run_round()?;
            if let Some(s) = store.as_deref_mut() {
                self.save_round(s)?;
            }
        }
        Ok(())
    }

    /// Deployment model per client under the configured strategy.
    pub fn finalize(&self) -> Result<Vec<Deployment>> {
        match self.config.strategy {
            Strategy::Sfl => Ok(self
                .clients
                .iter()
                .map(|c| Deployment { client_id: c.client_id, params: self.global.clone(), snapshot: None })
                .collect()),
            Strategy::Pfl { fine_tune_epochs } => self
                .clients
                .par_iter()
                .map(|c| {
                    let mut opt = c.optimizer.clone();
                    let mut params = train_epochs(
                        &self.global,
                        &mut opt,
                        &c.train,
                        &self.model,
                        &self.config.train_spec(),
                        None,
                        client_seed(self.config.seed, c.client_id),
                        self.round * self.config.local_epochs,
                        fine_tune_epochs,
                    )?;
                    if self.config.profile == Profile::Run {
                        params.quantize_f32();
                    }
                    Ok(Deployment { client_id: c.client_id, params, snapshot: None })
                })
                .collect(),
            Strategy::Afl => self
                .clients
                .iter()
                .map(|c| {
                    let (snap, params) = c
                        .best
                        .as_ref()
                        .ok_or_else(|| invalid(format!("client {} has no snapshots", c.client_id)))?;
                    Ok(Deployment { client_id: c.client_id, params: params.clone(), snapshot: Some(snap.clone()) })
                })
                .collect(),
        }
    }

    fn save_round(&mut self, store: &mut SnapshotStore) -> Result<()> {
        let r = self.round;
        for c in &mut self.clients {
            for snap in c.snapshots.iter_mut().filter(|s| s.round == r) {
                let params = match snap.origin {
                    Origin::Local => &c.params,
                    Origin::Global => &self.global,
                };
                let rec = store.put_snapshot(snap, params)?;
                snap.file = Some(rec.file.clone());
                store.manifest.records.push(rec);
            }
            if let Some((best, _)) = &mut c.best {
                if best.file.is_none() {
                    best.file = Some(SnapshotStore::snapshot_file_name(best));
                }
            }
            store.put_state(&format!("client{}_params", c.client_id), &c.params)?;
            if let Optimizer::AdamW(st) = &c.optimizer {
                store.put_state(&format!("client{}_m", c.client_id), &ParamVector::new(st.first_moment.clone()))?;
                store.put_state(&format!("client{}_v", c.client_id), &ParamVector::new(st.second_moment.clone()))?;
            }
        }
        store.put_state("global", &self.global)?;
        store.put_state("server_m", &ParamVector::new(self.server.first_moment.clone()))?;
        store.put_state("server_v", &ParamVector::new(self.server.second_moment.clone()))?;
        store.manifest.clients = self
            .clients
            .iter()
            .map(|c| ClientCheckpoint {
                client_id: c.client_id,
                step_count: match &c.optimizer {
                    Optimizer::AdamW(st) => st.step_count,
                    Optimizer::Sgd { .. } => 0,
                },
                best: c.best.as_ref().map(|(s, _)| s.clone()),
            })
            .collect();
        store.manifest.rounds_completed = r;
        store.commit()
    }

    /// Restore the state after the last completed round in `store`. A fresh
    /// store leaves the federation untouched.
    pub fn resume(&mut self, store: &SnapshotStore) -> Result<()> {
        let done = store.manifest.rounds_completed;
        if done == 0 {
            return Ok(());
        }
        if done > self.config.rounds {
            return Err(invalid("store holds more rounds than configured"));
        }
        self.global = store.read_state("global")?;
        self.server.first_moment = store.read_state("server_m")?.values;
        self.server.second_moment = store.read_state("server_v")?.values;
        for c in &mut self.clients {
            let ck = store
                .manifest
                .clients
                .iter()
                .find(|k| k.client_id == c.client_id)
                .ok_or_else(|| invalid(format!("store has no state for client {}", c.client_id)))?;
            c.params = store.read_state(&format!("client{}_params", c.client_id))?;
            if let Optimizer::AdamW(st) = &mut c.optimizer {
                st.first_moment = store.read_state(&format!("client{}_m", c.client_id))?.values;
                st.second_moment = store.read_state(&format!("client{}_v", c.client_id))?.values;
                st.step_count = ck.step_count;
            }
            c.snapshots = store
                .manifest
                .records
                .iter()
                .filter(|rec| rec.client_id == c.client_id && rec.round <= done)
                .map(|rec| rec.snapshot())
                .collect();
            c.best = match &ck.best {
                Some(b) => {
                    let file = b.file.as_deref().ok_or_else(|| invalid("best snapshot has no file"))?;
                    Some((b.clone(), store.read_params(file)?))
                }
                None => None,
            };
        }
        self.round = done;
        Ok(())
    }
}
