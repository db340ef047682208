// Scores a prediction against ground truth with both the classic
// whole-region metrics and their lesion-wise variants, which punish
// missed or invented lesions instead of averaging them away.

use lesionlab::metrics::evaluate_case;
use lesionlab::phantom::{make_case, LesionKind, LesionSpec, PhantomSpec};
use lesionlab::volume::Phase;
use lesionlab::Result;

fn case_with(lesions: Vec<LesionSpec>) -> PhantomSpec {
    PhantomSpec {
        id: Some("pair".into()),
        seed: 9,
        lesions,
        ..PhantomSpec::default()
    }
}

fn lesion(center: [f32; 3], radius: f32) -> LesionSpec {
    LesionSpec {
        center,
        radius,
        kind: LesionKind::shelled(),
    }
}

fn main() -> Result<()> {
    // Ground truth has two lesions; the prediction misses the small one
    // and slightly misplaces the big one.
    let gt = make_case(&case_with(vec![
        lesion([24.0, 31.5, 31.5], 9.0),
        lesion([44.0, 31.5, 31.5], 4.0),
    ]))?;
    let pred = make_case(&case_with(vec![lesion([25.0, 32.5, 31.5], 9.0)]))?;

    let scores = evaluate_case(&pred.label, &gt.label, Phase::Post)?;
    println!("region  legacy_dice  lesion_dice  legacy_nsd  lesion_nsd");
    for (region, rs) in scores.regions() {
        println!(
            "{:6}  {:11.4}  {:11.4}  {:10.4}  {:10.4}",
            region.name(),
            rs.legacy_dice,
            rs.lesion_dice,
            rs.legacy_nsd,
            rs.lesion_nsd
        );
    }
    Ok(())
}
