// Runs the lesion-insertion augmentation on a synthetic case: builds a
// donor pool from other cases' segmentations, then reports what each
// seed decided to do.

use lesionlab::augment::{augment_case, AugmentConfig, LabelPool, RandomStream};
use lesionlab::phantom::{make_case, LesionKind, LesionSpec, PhantomSpec};
use lesionlab::Result;

fn phantom(id: &str, seed: u64, center_x: f32, radius: f32) -> PhantomSpec {
    PhantomSpec {
        id: Some(id.into()),
        seed,
        lesions: vec![LesionSpec {
            center: [center_x, 31.5, 31.5],
            radius,
            kind: LesionKind::shelled(),
        }],
        ..PhantomSpec::default()
    }
}

fn main() -> Result<()> {
    let case = make_case(&phantom("host", 3, 26.0, 8.0))?;
    let donor = make_case(&phantom("case41", 4, 38.0, 7.0))?;

    let mut pool = LabelPool::new();
    pool.insert("case41", &donor.label)?;

    let cfg = AugmentConfig::custom();
    for seed in 0..6 {
        let mut rng = RandomStream::from_seed(seed);
        let (augmented, outcome) = augment_case(&case, &pool, &cfg, &mut rng)?;
        let grew = augmented
            .label
            .data
            .iter()
            .zip(&case.label.data)
            .filter(|(a, b)| a != b)
            .count();
        print!("seed {seed}: {} tumor(s), {grew} voxels changed", outcome.tumors_inserted);
        for r in &outcome.records {
            print!(
                "  [from {} scale {:.2} at {:?}{}]",
                r.donor_id,
                r.scale,
                r.offset,
                if r.snfh_removed { ", SNFH removed" } else { "" }
            );
        }
        println!();
    }
    Ok(())
}
