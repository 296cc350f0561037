//! Instrumented observers for auditing training runs.

use maskdp::data::Dataset;
use maskdp::mechanism::{clip_to_norm, GradientVector, RandomSeed};
use maskdp::model::{ModelDims, ModelParams};
use maskdp::trainer::{train_observed, StepObserver, TrainConfig};

/// Records the parameters after every executed step.
#[derive(Default)]
pub struct Trajectory(pub Vec<(u64, Vec<f64>)>);

impl StepObserver for Trajectory {
    fn step_finished(&mut self, step: u64, params: &ModelParams) {
        self.0.push((step, params.flat().to_vec()));
    }
}

pub fn trajectory(config: &TrainConfig, data: &Dataset) -> Trajectory {
    let mut t = Trajectory::default();
    train_observed(config, data, None, &mut t).unwrap();
    t
}

pub fn assert_bitwise_equal(a: &Trajectory, b: &Trajectory) {
    assert!(a.0.len() >= 50, "only {} executed steps", a.0.len());
    assert_eq!(a.0.len(), b.0.len());
    for ((sa, pa), (sb, pb)) in a.0.iter().zip(&b.0) {
        assert_eq!(sa, sb);
        let bits = |p: &[f64]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(pa), bits(pb), "diverged at step {sa}");
    }
}

/// Recomputes every step from the pre-step parameters.
pub struct Audit<'a> {
    pub data: &'a Dataset,
    pub clip: f64,
    pub lr: f64,
    pub current: ModelParams,
    pub batch: Vec<usize>,
    pub public: Vec<(usize, GradientVector)>,
    pub private: Vec<(usize, GradientVector)>,
    pub noise: Vec<GradientVector>,
    pub max_private_norm: f64,
    pub clipped_count: usize,
    pub executed: u64,
    pub noise_samples: Vec<f64>,
}

impl<'a> Audit<'a> {
    pub fn new(data: &'a Dataset, config: &TrainConfig) -> Self {
        let meta = data.meta();
        let dims = ModelDims::new(meta.d_in, config.hidden_dim, meta.n_classes).unwrap();
        Self {
            data,
            clip: config.clip_threshold.get(),
            lr: config.learning_rate,
            current: ModelParams::init(dims, config.activation, RandomSeed(config.seed)),
            batch: Vec::new(),
            public: Vec::new(),
            private: Vec::new(),
            noise: Vec::new(),
            max_private_norm: 0.0,
            clipped_count: 0,
            executed: 0,
            noise_samples: Vec::new(),
        }
    }
}

impl StepObserver for Audit<'_> {
    fn step_started(&mut self, _step: u64, batch: &[usize]) {
        self.batch = batch.to_vec();
        self.public.clear();
        self.private.clear();
        self.noise.clear();
    }

    fn public_contribution(&mut self, _step: u64, sample: usize, grad: &GradientVector) {
        let s = &self.data.samples()[sample];
        let (_, public) = s.tokenize();
        let (_, expected) = self.current.loss_and_grad(&public, s.label).unwrap();
        assert_eq!(grad, &expected, "public gradient was modified");
        self.public.push((sample, grad.clone()));
    }

    fn private_contribution(
        &mut self,
        _step: u64,
        sample: usize,
        raw: &GradientVector,
        clipped: &GradientVector,
    ) {
        let s = &self.data.samples()[sample];
        let (private, _) = s.tokenize();
        let (_, expected) = self.current.loss_and_grad(&private, s.label).unwrap();
        assert_eq!(raw, &expected);
        assert_eq!(clipped, &clip_to_norm(raw.clone(), self.clip));
        assert!(clipped.l2_norm() <= self.clip + 1e-9);
        self.max_private_norm = self.max_private_norm.max(clipped.l2_norm());
        if raw.l2_norm() > self.clip {
            self.clipped_count += 1;
        }
        self.private.push((sample, clipped.clone()));
    }

    fn noise_added(&mut self, _step: u64, noise: &GradientVector) {
        self.noise.push(noise.clone());
        self.noise_samples.extend_from_slice(noise.as_slice());
    }

    fn step_finished(&mut self, _step: u64, params: &ModelParams) {
        self.executed += 1;
        assert_eq!(
            self.noise.len(),
            1,
            "noise must be added exactly once per step"
        );
        // Every batch member contributes on each of its non-empty branches.
        for &i in &self.batch {
            let (pr, pu) = self.data.samples()[i].tokenize();
            assert_eq!(
                self.public.iter().filter(|(j, _)| *j == i).count(),
                usize::from(!pu.is_empty())
            );
            assert_eq!(
                self.private.iter().filter(|(j, _)| *j == i).count(),
                usize::from(!pr.is_empty())
            );
        }
        let dim = self.current.dims().param_count();
        let mut public_sum = GradientVector::zeros(dim);
        for (_, g) in &self.public {
            public_sum += g;
        }
        let mut private_sum = GradientVector::zeros(dim);
        for (_, g) in &self.private {
            private_sum += g;
        }
        private_sum += &self.noise[0];
        let mut total = public_sum;
        total += &private_sum;
        total.scale(1.0 / self.batch.len() as f64);
        let mut expected = self.current.clone();
        expected.apply_update(&total, self.lr);
        assert_eq!(
            &expected, params,
            "update is not (sum_pu + sum_clipped + noise) / |B|"
        );
        self.current = params.clone();
    }
}
