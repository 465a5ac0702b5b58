//! Tape gradients against central finite differences for every primitive
//! and block, each at three shapes.

use mors::gradsuite::{run, CASES};

fn assert_case(name: &str) {
    let results = run(Some(name), 7).unwrap();
    let mine: Vec<_> = results.iter().filter(|r| r.name == name).collect();
    assert!(mine.len() >= 3, "{name}: only {} shapes", mine.len());
    for r in mine {
        assert!(
            r.passed(),
            "{name} at {:?}: rel error {:e} > {:e}",
            r.shape,
            r.max_rel_error,
            r.tolerance
        );
    }
}

macro_rules! cases {
    ($($name:ident),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                assert_case(stringify!($name));
            }
        )*

        #[test]
        fn every_case_is_covered() {
            let covered = [$(stringify!($name)),*];
            for c in CASES {
                assert!(covered.contains(c), "{c} has no test");
            }
        }
    };
}

cases!(
    linear,
    conv2d,
    conv2d_stride2,
    dwconv2d,
    gelu,
    sigmoid,
    layernorm,
    global_avg_pool,
    softmax_cross_entropy,
    add,
    mul,
    split_concat,
    scale_rows,
    droppath,
    ffg,
    gated_cnn,
    fgb,
    stem,
    downsample,
    head,
    model,
);
