//! Running-time model: per central epoch, every trainer pays its local SGD
//! time plus one ciphertext upload, download, encryption, and decryption.

use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// Server-aided: one TLS connection per trainer.
    Snt,
    /// Fully connected mesh: one per trainer pair.
    Fnt,
}

/// One trainer's timing components, all in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainerTiming {
    pub sgd: f64,
    pub upload: f64,
    pub download: f64,
    pub encrypt: f64,
    pub decrypt: f64,
}

impl TrainerTiming {
    pub fn total(&self) -> f64 {
        self.sgd + self.upload + self.download + self.encrypt + self.decrypt
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        for component in [self.sgd, self.upload, self.download, self.encrypt, self.decrypt] {
            if component < 0.0 {
                return Err(AnalysisError::NegativeComponent(component));
            }
        }
        Ok(())
    }
}

/// Per-trainer components plus the epoch count.
#[derive(Clone, Debug)]
pub struct TimingProfile {
    pub n_epoch: u64,
    pub trainers: Vec<TrainerTiming>,
}

impl TimingProfile {
    /// All trainers share the same components.
    pub fn uniform(n_epoch: u64, trainer_count: usize, timing: TrainerTiming) -> Self {
        TimingProfile { n_epoch, trainers: vec![timing; trainer_count] }
    }
}

/// Total running time in seconds:
/// `n_epoch * sum_i (sgd_i + upload_i + download_i + enc_i + dec_i)`.
pub fn estimate_time(profile: &TimingProfile) -> Result<f64, AnalysisError> {
    let mut per_epoch = 0.0;
    for trainer in &profile.trainers {
        trainer.validate()?;
        per_epoch += trainer.total();
    }
    Ok(profile.n_epoch as f64 * per_epoch)
}

/// TLS connections the topology needs for `trainer_count` trainers.
pub fn connection_count(topology: Topology, trainer_count: u64) -> u64 {
    match topology {
        Topology::Snt => trainer_count,
        Topology::Fnt => trainer_count * trainer_count.saturating_sub(1) / 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mlp_timing() -> TrainerTiming {
        // 0.3 minutes of local SGD, the rest in seconds
        TrainerTiming { sgd: 18.0, upload: 0.05, download: 0.05, encrypt: 0.12, decrypt: 0.06 }
    }

    #[test]
    fn mlp_profile_reproduces_973_minutes() {
        let profile = TimingProfile::uniform(639, 5, mlp_timing());
        let seconds = estimate_time(&profile).unwrap();
        let minutes = seconds / 60.0;
        assert!((minutes - 973.41).abs() < 0.005, "{minutes} minutes");
    }

    #[test]
    fn cnn_profile_reproduces_3466_seconds() {
        let timing = TrainerTiming {
            sgd: 3.3,
            upload: 0.051,
            download: 0.051,
            encrypt: 0.13,
            decrypt: 0.06,
        };
        let profile = TimingProfile::uniform(193, 5, timing);
        let seconds = estimate_time(&profile).unwrap();
        assert!((seconds - 3466.0).abs() / 3466.0 < 0.005, "{seconds} seconds");
    }

    #[test]
    fn zero_epochs_is_zero_time() {
        let profile = TimingProfile::uniform(0, 5, mlp_timing());
        assert_eq!(estimate_time(&profile).unwrap(), 0.0);
    }

    #[test]
    fn linear_in_epochs_and_additive_over_trainers() {
        let t = mlp_timing();
        let one = estimate_time(&TimingProfile::uniform(1, 1, t)).unwrap();
        let many = estimate_time(&TimingProfile::uniform(7, 4, t)).unwrap();
        assert!((many - 28.0 * one).abs() < 1e-9);
    }

    #[test]
    fn negative_component_rejected() {
        let mut bad = mlp_timing();
        bad.decrypt = -0.1;
        assert!(estimate_time(&TimingProfile::uniform(1, 1, bad)).is_err());
    }

    #[test]
    fn connection_counts() {
        assert_eq!(connection_count(Topology::Snt, 20), 20);
        assert_eq!(connection_count(Topology::Fnt, 5), 10);
        assert_eq!(connection_count(Topology::Fnt, 1), 0);
        assert_eq!(connection_count(Topology::Fnt, 2), 1);
    }
}
