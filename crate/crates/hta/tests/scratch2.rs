// Temporary estimation debugging; run explicitly with --ignored.

use hta::data::{vdp_solve, VdpConfig};
use hta::experiments::*;
use hta::network::Activation;

#[test]
#[ignore]
fn probe_vdp_matrix() {
    for (act, lr, hidden) in [
        (Activation::ReLU, 0.005, 20),
        (Activation::ReLU, 0.01, 20),
        (Activation::Sigmoid, 0.05, 64),
        (Activation::Sigmoid, 0.2, 20),
        (Activation::Sigmoid, 0.05, 20),
    ] {
        let cfg = VdpSurrogateConfig {
            restarts: 3,
            parallel: 2,
            seed: 1,
            lr,
            hidden,
            activation: act,
            ..VdpSurrogateConfig::default()
        };
        let start = std::time::Instant::now();
        let out = vdp_surrogate(&cfg).unwrap();
        let (t, h) = (
            out.report.traditional.best.test_loss,
            out.report.hta.best.test_loss,
        );
        println!(
            "act={act:?} lr={lr} hidden={hidden}: trad {t:.4} hta {h:.4} ratio {:.3} ({:.0}s)",
            h / t,
            start.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn probe_estimation_detail() {
    let cfg = VdpSurrogateConfig { restarts: 3, parallel: 2, seed: 1, ..VdpSurrogateConfig::default() };
    let out = vdp_surrogate(&cfg).unwrap();
    println!(
        "surrogate quality: trad {:.4} hta {:.4}",
        out.report.traditional.best.test_loss, out.report.hta.best.test_loss
    );
    let est = EstimateConfig::default();
    let params = subsample_params(&out.test, est.samples);
    let t = err_pe(&out.traditional_net, &params, &est).unwrap();
    let h = err_pe(&out.hta_net, &params, &est).unwrap();
    println!("err_pe: trad {:.3} hta {:.3}", t.err_pe, h.err_pe);
    for &(mu, k) in &[(11.1, 12.9), (13.9, 11.1), (12.5, 12.5)] {
        let y = vdp_solve(&VdpConfig::with_params(mu, k)).unwrap().y;
        let te = param_estimate(&out.traditional_net, y, est.init, est.steps, est.lr).unwrap();
        let he = param_estimate(&out.hta_net, y, est.init, est.steps, est.lr).unwrap();
        println!(
            "  sample ({mu},{k}) y~={y:.4}: trad -> ({:.2},{:.2}); hta -> ({:.2},{:.2})",
            te.0, te.1, he.0, he.1
        );
    }
}
