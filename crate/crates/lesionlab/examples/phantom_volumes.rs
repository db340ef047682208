// Generates one synthetic case (four MRI contrasts plus a segmentation),
// prints its label census, and writes the volumes as NIfTI files.

use lesionlab::phantom::{make_case, LesionSpec, PhantomSpec};
use lesionlab::volume::{save_intensity, save_label, Modality};
use lesionlab::Result;

fn main() -> Result<()> {
    let spec = PhantomSpec {
        id: Some("demo".into()),
        seed: 11,
        lesions: vec![
            LesionSpec {
                center: [24.0, 31.5, 31.5],
                radius: 9.0,
                kind: lesionlab::phantom::LesionKind::shelled(),
            },
            LesionSpec {
                center: [42.0, 31.5, 31.5],
                radius: 6.0,
                kind: lesionlab::phantom::LesionKind::Solid { class: 2 },
            },
        ],
        ..PhantomSpec::default()
    };

    let case = make_case(&spec)?;
    let dims = case.label.dims;
    println!("case {:?}: {}x{}x{} voxels", case.id, dims.nx, dims.ny, dims.nz);

    let mut counts = [0usize; 5];
    for &code in &case.label.data {
        counts[code as usize] += 1;
    }
    for (code, name) in [(1, "NETC"), (2, "SNFH"), (3, "ET"), (4, "RC")] {
        println!("  label {code} ({name}): {} voxels", counts[code]);
    }

    let dir = std::env::temp_dir().join("lesionlab-phantom-example");
    std::fs::create_dir_all(&dir).map_err(|e| lesionlab::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    for (m, vol) in Modality::ALL.iter().zip(&case.modalities) {
        save_intensity(vol, dir.join(format!("demo-{}.nii.gz", m.suffix())))?;
    }
    save_label(&case.label, dir.join("demo-seg.nii.gz"))?;
    println!("wrote volumes to {}", dir.display());
    Ok(())
}
