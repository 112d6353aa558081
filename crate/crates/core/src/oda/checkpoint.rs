use std::path::Path;

use super::OdaError;
use crate::config::ExperimentConfig;
use crate::learners::Nets;
use crate::nn::{Adam, Container, ParamSet};
use crate::seeding;
use crate::Scalar;

/// Full learner state: encoder, actor, critic and target critic
/// parameters, the three optimisers, the config that produced them and the
/// number of completed iterations.
#[derive(Debug, Clone)]
pub struct MetaCheckpoint<T> {
    pub nets: Nets,
    pub phi: ParamSet<T>,
    pub theta: ParamSet<T>,
    pub psi: ParamSet<T>,
    pub psi_target: ParamSet<T>,
    pub opt_phi: Adam<T>,
    pub opt_theta: Adam<T>,
    pub opt_psi: Adam<T>,
    pub config: ExperimentConfig,
    pub iteration: usize,
}

const KIND: &str = "meta-checkpoint";

fn precision_name<T: Scalar>() -> &'static str {
    if std::mem::size_of::<T>() == 4 {
        "f32"
    } else {
        "f64"
    }
}

fn same_layout<T: Scalar>(a: &ParamSet<T>, b: &ParamSet<T>) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((na, xa), (nb, xb))| na == nb && xa.dim() == xb.dim())
}

impl<T: Scalar> MetaCheckpoint<T> {
    /// Fresh networks seeded from the config seed; the target critic starts
    /// as a copy of the critic.
    pub fn init(config: ExperimentConfig) -> Self {
        let nets = Nets::new(config.net_spec());
        let (phi, theta, psi) = nets.init::<T>(seeding::mix(config.seed, 0x1a17));
        MetaCheckpoint {
            opt_phi: Adam::new(&phi),
            opt_theta: Adam::new(&theta),
            opt_psi: Adam::new(&psi),
            psi_target: psi.clone(),
            nets,
            phi,
            theta,
            psi,
            config,
            iteration: 0,
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", KIND);
        c.set_meta("config", self.config.render());
        c.set_meta("config_hash", self.config.hash_hex());
        c.set_meta("iteration", self.iteration);
        c.set_meta("precision", precision_name::<T>());
        c.put_params("phi", &self.phi);
        c.put_params("theta", &self.theta);
        c.put_params("psi", &self.psi);
        c.put_params("psi_target", &self.psi_target);
        c.put_adam("adam.phi", &self.opt_phi);
        c.put_adam("adam.theta", &self.opt_theta);
        c.put_adam("adam.psi", &self.opt_psi);
        c
    }

    /// Rebuild from a container, checking the stored config hash against
    /// the stored config text and every array shape against the networks the
    /// config describes.
    pub fn from_container(c: &Container) -> Result<Self, OdaError> {
        if c.meta("kind")? != KIND {
            return Err(OdaError::Checkpoint(format!("expected kind {KIND}, found {}", c.meta("kind")?)));
        }
        let config = ExperimentConfig::parse(c.meta("config")?).map_err(|e| OdaError::Checkpoint(format!("stored config: {e}")))?;
        let stored = c.meta("config_hash")?;
        if stored != config.hash_hex() {
            return Err(OdaError::ConfigMismatch { stored: stored.to_string(), expected: config.hash_hex() });
        }
        let fresh = Self::init(config);
        let ck = MetaCheckpoint {
            phi: c.params("phi"),
            theta: c.params("theta"),
            psi: c.params("psi"),
            psi_target: c.params("psi_target"),
            opt_phi: c.adam("adam.phi")?,
            opt_theta: c.adam("adam.theta")?,
            opt_psi: c.adam("adam.psi")?,
            iteration: c.meta_parsed("iteration")?,
            ..fresh.clone()
        };
        let pairs = [
            (&ck.phi, &fresh.phi, "phi"),
            (&ck.theta, &fresh.theta, "theta"),
            (&ck.psi, &fresh.psi, "psi"),
            (&ck.psi_target, &fresh.psi, "psi_target"),
            (&ck.opt_phi.m, &fresh.phi, "adam.phi.m"),
            (&ck.opt_phi.v, &fresh.phi, "adam.phi.v"),
            (&ck.opt_theta.m, &fresh.theta, "adam.theta.m"),
            (&ck.opt_theta.v, &fresh.theta, "adam.theta.v"),
            (&ck.opt_psi.m, &fresh.psi, "adam.psi.m"),
            (&ck.opt_psi.v, &fresh.psi, "adam.psi.v"),
        ];
        for (got, want, what) in pairs {
            if !same_layout(got, want) {
                return Err(OdaError::Checkpoint(format!("{what} does not match the configured networks")));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OdaError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OdaError> {
        Self::from_container(&Container::load(path)?)
    }

    /// Load and require the stored config to hash equal to `expected`.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ExperimentConfig) -> Result<Self, OdaError> {
        let ck = Self::load(path)?;
        if ck.config.hash() != expected.hash() {
            return Err(OdaError::ConfigMismatch { stored: ck.config.hash_hex(), expected: expected.hash_hex() });
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oda::tests::{tiny_config, tiny_data};
    use crate::oda::{continue_meta_train, meta_train};

    #[test]
    fn round_trip_preserves_training() {
        let (tasks, demos, offline) = tiny_data(2);
        let cfg = tiny_config();
        let a = meta_train::<f64>(&tasks, &demos, &offline, &cfg).unwrap().checkpoint;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        a.save(&p).unwrap();
        let b = MetaCheckpoint::<f64>::load_expecting(&p, &cfg).unwrap();
        assert_eq!(b.to_container().to_bytes(), a.to_container().to_bytes());
        let ca = continue_meta_train(a, &tasks, &demos, &offline, 2).unwrap().checkpoint;
        let cb = continue_meta_train(b, &tasks, &demos, &offline, 2).unwrap().checkpoint;
        assert_eq!(ca.to_container().to_bytes(), cb.to_container().to_bytes());
    }

    #[test]
    fn config_mismatch_and_tampering_detected() {
        let cfg = tiny_config();
        let ck = MetaCheckpoint::<f64>::init(cfg.clone());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        ck.save(&p).unwrap();
        let other = ExperimentConfig { seed: 9, ..cfg };
        assert!(matches!(MetaCheckpoint::<f64>::load_expecting(&p, &other), Err(OdaError::ConfigMismatch { .. })));

        let mut c = ck.to_container();
        c.set_meta("config_hash", "0000000000000000");
        assert!(matches!(MetaCheckpoint::<f64>::from_container(&c), Err(OdaError::ConfigMismatch { .. })));

        let mut c = ck.to_container();
        c.arrays.remove("theta/actor.w0");
        assert!(matches!(MetaCheckpoint::<f64>::from_container(&c), Err(OdaError::Checkpoint(_))));
    }

    #[test]
    fn f32_checkpoint_round_trips() {
        let ck = MetaCheckpoint::<f32>::init(tiny_config());
        let c = ck.to_container();
        assert_eq!(c.meta("precision").unwrap(), "f32");
        let back = MetaCheckpoint::<f32>::from_container(&c).unwrap();
        assert_eq!(back.theta, ck.theta);
    }
}
