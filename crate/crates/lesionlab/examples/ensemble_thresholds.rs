// Averages probability maps from three simulated models, decodes labels
// for a pre- and a post-treatment read of the same volume, and shows how
// the minimum-size thresholds prune the decoded segmentation.

use lesionlab::phantom::{make_case, make_probability, LesionKind, LesionSpec, PhantomSpec};
use lesionlab::postproc::{apply_thresholds, argmax_label, ensemble, ensemble_predict, ThresholdSet};
use lesionlab::volume::Phase;
use lesionlab::Result;

fn count_codes(data: &[u8]) -> [usize; 5] {
    let mut counts = [0usize; 5];
    for &c in data {
        counts[c as usize] += 1;
    }
    counts
}

fn main() -> Result<()> {
    let spec = PhantomSpec {
        id: Some("scan".into()),
        seed: 21,
        lesions: vec![
            LesionSpec {
                center: [26.0, 31.5, 31.5],
                radius: 8.0,
                kind: LesionKind::shelled(),
            },
            LesionSpec {
                center: [42.0, 28.0, 31.5],
                radius: 2.2,
                kind: LesionKind::Solid { class: 4 },
            },
        ],
        ..PhantomSpec::default()
    };
    let case = make_case(&spec)?;

    // Three models, each fairly confident but with independent noise.
    let probs: Vec<_> = (0..3)
        .map(|i| make_probability(&case.label, 0.55 + 0.1 * i as f64, 100 + i))
        .collect();

    let mean = ensemble(&probs)?;
    let raw = argmax_label(&mean);
    let post = apply_thresholds(&raw, &ThresholdSet::set1(), Phase::Post);
    let pre = ensemble_predict(&probs, Phase::Pre, &ThresholdSet::set1())?;

    println!("code counts [bg, NETC, SNFH, ET, RC]");
    println!("  truth:          {:?}", count_codes(&case.label.data));
    println!("  raw argmax:     {:?}", count_codes(&raw.data));
    println!("  post-treatment: {:?}", count_codes(&post.data));
    println!("  pre-treatment:  {:?} (RC suppressed)", count_codes(&pre.data));
    Ok(())
}
