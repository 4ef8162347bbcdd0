mod common;

use common::{ddpm_grad_error, ddpm_grad_error_naive, dpo_grad_error, dpo_grad_error_naive, instance};

#[test]
fn ddpm_gradient_matches_central_differences() {
    for s in 0..20 {
        let err = ddpm_grad_error(&instance(s));
        assert!(err < 1e-5, "instance {s}: max relative error {err:e}");
    }
}

#[test]
fn dpo_gradient_matches_central_differences() {
    for s in 0..20 {
        let err = dpo_grad_error(&instance(100 + s), 5.0);
        assert!(err < 1e-5, "instance {s}: max relative error {err:e}");
    }
}

#[test]
fn plain_differences_agree_loosely() {
    for s in 0..5 {
        let inst = instance(200 + s);
        assert!(ddpm_grad_error_naive(&inst) < 1e-3);
        assert!(dpo_grad_error_naive(&inst, 5.0) < 1e-3);
    }
}
