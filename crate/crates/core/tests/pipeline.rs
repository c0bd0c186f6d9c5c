use trpca_core::datagen::InstanceFamily;
use trpca_core::io::{read_params, read_tensor, write_params, write_tensor, ParamsDocument};
use trpca_core::learner::{finetune, GradientMethod, RawParams, ThresholdScale, TrainConfig};
use trpca_core::solver::{solve, SolverConfig};
use trpca_core::tensor::RankTriple;

#[test]
fn files_to_recovery_and_back() {
    let dir = tempfile::tempdir().unwrap();
    let inst = InstanceFamily::new(12, 2, 0.1, 3.0).sample(5).unwrap();
    write_tensor(dir.path().join("Y.tns3"), &inst.y).unwrap();
    let y = read_tensor(dir.path().join("Y.tns3")).unwrap();
    assert_eq!(y, inst.y);

    let cfg = SolverConfig::new(RankTriple::uniform(2), 100);
    let tcfg = TrainConfig {
        steps: 5,
        method: GradientMethod::ForwardDual,
        ..TrainConfig::finetune()
    };
    let out = finetune(&inst, &cfg, &tcfg, RawParams::default_init()).unwrap();
    let scale = ThresholdScale::of(&y).unwrap();
    let doc = ParamsDocument::from_raw(out.raw, scale).unwrap();
    write_params(dir.path().join("params.json"), &doc).unwrap();
    let back = read_params(dir.path().join("params.json")).unwrap();
    assert_eq!(back.hyper(), out.hyper);

    // Re-solving from the stored parameters reproduces the selected trace.
    let trace = solve(&y, &cfg, &back.hyper(), inst.xstar.as_ref()).unwrap();
    assert_eq!(trace.final_record().loss_ssl, out.trace.final_record().loss_ssl);
    let err = trace.final_record().rel_error.unwrap();
    assert!(err < 1e-3, "{err:e}");
}
