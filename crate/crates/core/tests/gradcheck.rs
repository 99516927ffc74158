//! Finite-difference oracle for the full encoder gradients, both objectives.

mod common;

use common::{max_fd_error, random_arch, random_batch};
use rand::Rng;
use sapt_core::encoder::{init_params, ObjectiveSpec};
use sapt_core::objective::ContrastiveConfig;
use sapt_core::rng::rng_from_seed;

#[test]
fn supervised_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(101);
    for trial in 0..20 {
        let num_classes = rng.gen_range(2..=4);
        let arch = random_arch(&mut rng, num_classes);
        let params = init_params(&arch, rng.gen()).unwrap();
        let batch = random_batch(&mut rng, &arch, 2, true);
        let err = max_fd_error(&arch, &params, &batch, &ObjectiveSpec::Supervised, 200, &mut rng);
        assert!(err <= 1e-4, "trial {trial}: max relative error {err:e}");
    }
}

#[test]
fn self_supervised_gradients_match_finite_differences() {
    let mut rng = rng_from_seed(202);
    for trial in 0..20 {
        let arch = random_arch(&mut rng, 2);
        let params = init_params(&arch, rng.gen()).unwrap();
        let batch = random_batch(&mut rng, &arch, 2, false);
        let spec = ObjectiveSpec::SelfSupervised {
            mask_prob: 0.4,
            mask_span: 2,
            contrastive: ContrastiveConfig { num_distractors: 3, temperature: 0.2 },
            seed: rng.gen(),
        };
        let err = max_fd_error(&arch, &params, &batch, &spec, 200, &mut rng);
        assert!(err <= 1e-4, "trial {trial}: max relative error {err:e}");
    }
}
