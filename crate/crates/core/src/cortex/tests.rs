use super::*;
use crate::rng::RngStream;
use crate::sdr::random_sdr;

fn small(widths: Vec<usize>, scale: Vec<usize>, lat: Vec<usize>) -> CortexConfig {
    CortexConfig { rung_widths: widths, scale_out: scale, lateral_width: lat, ..CortexConfig::default() }
}

#[test]
fn wiring_4x4_counts() {
    let cfg = small(vec![4, 4, 4, 4], vec![1; 4], vec![0, 1, 1, 1]);
    cfg.validate().unwrap();
    let w = Wiring::build(&cfg);
    assert_eq!(w.total_columns(), 16);
    assert!(w.slices.iter().all(|b| b.len() == 2));
    // groups shift by one column per boundary
    assert_eq!(w.slices[0][0].group, vec![0, 1]);
    assert_eq!(w.slices[1][0].group, vec![1, 2]);
    assert_eq!(w.slices[2][0].group, vec![2, 3]);
    assert_eq!(w.slices[2][1].group, vec![0, 1]);
    // every upper column has exactly one slice below
    for r in 1..4 {
        assert!(w.columns[r].iter().all(|c| c.slice_below.is_some()));
    }
    assert_eq!(w.columns[1][3].sources, vec![Source::Column(3), Source::Column(0)]);
}

#[test]
fn wiring_golden_table() {
    let cfg = small(vec![4, 4], vec![1, 1], vec![0, 1]);
    let expected = "\
r1c0 <- [in0] below=None above=[0] succ=[0]
r1c1 <- [in1] below=None above=[0] succ=[1]
r1c2 <- [in2] below=None above=[1] succ=[2]
r1c3 <- [in3] below=None above=[1] succ=[3]
r2c0 <- [r1c0,r1c1] below=Some(0) above=[] succ=[]
r2c1 <- [r1c1,r1c2] below=Some(0) above=[] succ=[]
r2c2 <- [r1c2,r1c3] below=Some(1) above=[] succ=[]
r2c3 <- [r1c3,r1c0] below=Some(1) above=[] succ=[]
s1.0 group=[0, 1] copy=0 consumers=[0, 1]
s1.1 group=[2, 3] copy=0 consumers=[2, 3]
";
    assert_eq!(Wiring::build(&cfg).table(), expected);
    assert_eq!(Wiring::build(&cfg), Wiring::build(&cfg));
}

#[test]
fn scale_out_fans_out() {
    let cfg = small(vec![4, 4, 8, 32], vec![1, 1, 2, 4], vec![0, 0, 0, 0]);
    cfg.validate().unwrap();
    let w = Wiring::build(&cfg);
    assert_eq!(w.columns[3].len(), 32);
    assert_eq!(w.columns[2][5].successors, vec![20, 21, 22, 23]);
    // each copy gets its own slice
    assert_eq!(w.slices[2].len(), 4 * 4);
    for j in 0..32 {
        let k = w.columns[3][j].slice_below.unwrap();
        assert_eq!(w.slices[2][k].copy, j % 4);
    }
}

#[test]
fn invalid_configs_rejected() {
    assert!(small(vec![], vec![], vec![]).validate().is_err());
    assert!(small(vec![4, 4], vec![1, 1], vec![1, 1]).validate().is_err());
    assert!(small(vec![4, 8], vec![1, 1], vec![0, 0]).validate().is_err());
    let mut c = small(vec![4, 4], vec![1, 1], vec![0, 1]);
    c.lateral_offsets = vec![4];
    assert!(c.validate().is_err());
    assert!(CortexConfig::from_toml("rung_widths = [2]\nbogus = 1\n").is_err());
}

#[test]
fn toml_roundtrip() {
    let c = CortexConfig::default();
    let text = c.to_toml().unwrap();
    assert_eq!(CortexConfig::from_toml(&text).unwrap(), c);
    let partial = CortexConfig::from_toml("rung_widths = [2, 2]\nattention = \"forced\"\n[column]\nbranches_per_cell = 8\n").unwrap();
    assert_eq!(partial.column.branches_per_cell, 8);
    assert_eq!(partial.attention, AttentionMode::Forced);
}

#[test]
fn same_seed_same_initial_tables() {
    let a = Cortex::new(CortexConfig::default()).unwrap();
    let b = Cortex::new(CortexConfig::default()).unwrap();
    assert_eq!(a, b);
    let c = Cortex::new(CortexConfig { master_seed: 2, ..CortexConfig::default() }).unwrap();
    assert_ne!(a.column(0, 0).synapse_digest(), c.column(0, 0).synapse_digest());
}

fn stream(cfg: &CortexConfig, len: usize, period: usize) -> Vec<Vec<Option<TaggedSdr>>> {
    let w = cfg.rung_widths[0];
    let mut rng = RngStream::derive(99, "alpha");
    let alpha: Vec<Vec<Sdr>> = (0..w).map(|_| (0..period).map(|_| random_sdr(cfg.input_width, cfg.input_active, &mut rng).unwrap()).collect()).collect();
    (0..len)
        .map(|t| (0..w).map(|f| Some(TaggedSdr::new(alpha[f][t % period].clone(), Tag { stream_id: 0, offset: (t % period) as u32 }))).collect())
        .collect()
}

#[test]
fn upper_rung_steps_only_on_symbols() {
    let cfg = CortexConfig::default();
    let mut cx = Cortex::new(cfg.clone()).unwrap();
    for ins in stream(&cfg, 200, 7) {
        let rep = cx.step(&ins).unwrap();
        for j in 0..4 {
            let fed = cx.wiring().columns[1][j].sources.iter().any(|s| matches!(s, Source::Column(p) if rep.outputs[0][*p].is_some()));
            assert_eq!(rep.stepped[1][j], fed);
        }
    }
}

#[test]
fn idle_column_step_is_a_noop() {
    let cfg = CortexConfig::default();
    let mut cx = Cortex::new(cfg.clone()).unwrap();
    for ins in stream(&cfg, 50, 5) {
        cx.step(&ins).unwrap();
    }
    let mut col = cx.column(1, 0).clone();
    let before = col.clone();
    col.step(&[None, None], &ColumnGates::all(), false).unwrap();
    assert_eq!(col, before);
}

#[test]
fn feedback_reaches_predecessor_l1() {
    let cfg = small(vec![2, 4], vec![1, 2], vec![0, 0]);
    let mut cx = Cortex::new(cfg.clone()).unwrap();
    for ins in stream(&cfg, 300, 6) {
        cx.step(&ins).unwrap();
    }
    let a = cx.column(1, 0).l6a_prediction();
    let b = cx.column(1, 1).l6a_prediction();
    let merged = a.add(b).unwrap();
    // the column keeps its own copy of the latched multiset
    let mut probe = cx.column(0, 0).clone();
    probe.latch_l1_feedback(merged.clone()).unwrap();
    assert_eq!(&probe, cx.column(0, 0));
}

#[test]
fn parallel_and_serial_runs_agree() {
    let cfg = CortexConfig::default();
    let inputs = stream(&cfg, 300, 9);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut cx = Cortex::new(cfg.clone()).unwrap();
            let reps: Vec<CycleReport> = inputs.iter().map(|i| cx.step(i).unwrap()).collect();
            (reps, cx)
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn rejects_wrong_input_count() {
    let mut cx = Cortex::new(CortexConfig::default()).unwrap();
    assert!(cx.step(&[None]).is_err());
}
