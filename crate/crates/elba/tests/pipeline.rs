use elba::pipeline::{self, par_run_arm, Layout};
use elba::RunConfig;
use elba_core::metrics::{arm_seeds, run_arm};
use elba_core::world::SplitTag;

#[test]
fn parallel_arms_match_the_sequential_runner() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.data.n_layouts = 5;
    cfg.data.episodes_per_layout = 6;
    cfg.actioner.epochs = 1;
    cfg.planner.epochs = 3;
    cfg.qaeval.epochs = 1;
    let layout = Layout::new(d.path());
    pipeline::cmd_gen(&cfg, &layout).unwrap();
    pipeline::cmd_train_actioner(&cfg, &layout, None).unwrap();
    pipeline::cmd_train_planner(&cfg, &layout).unwrap();
    pipeline::cmd_train_qaeval(&cfg, &layout).unwrap();
    let models = pipeline::load_models(&cfg, &layout).unwrap();
    let eps = pipeline::load_split(&cfg, &layout, SplitTag::TestSeen).unwrap();
    let seeds = arm_seeds(cfg.seed, 2);
    let agent = cfg.arm_config("elba_g").unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let par = pool.install(|| par_run_arm("elba_g", "test_seen", &eps, &models, &agent, &seeds).unwrap());
    let seq = run_arm("elba_g", "test_seen", &eps, &models, &agent, &seeds).unwrap();
    assert_eq!(par, seq);
}
