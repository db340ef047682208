// Ranks a set of models per region from an aggregate score table
// (competition ranking: ties share the best rank), then runs a paired
// t-test between two of the rows.

use lesionlab::stats::{paired_t, rank_models, ScoreMatrix};
use lesionlab::Result;

const SCORES: &str = "\
model,ET,NETC,RC,SNFH,TC,WT
plain,0.792,0.834,0.864,0.806,0.819,0.838
filtered,0.816,0.835,0.892,0.813,0.827,0.843
strict,0.811,0.835,0.891,0.813,0.825,0.842
";

fn main() -> Result<()> {
    let matrix = ScoreMatrix::from_csv_str(SCORES)?;
    let table = rank_models(&matrix);
    print!("{}", table.to_csv_string());

    let t = paired_t(matrix.row(0), matrix.row(1))?;
    println!();
    println!(
        "plain vs filtered: t = {:.4}, p = {:.4}, df = {}",
        t.t, t.p, t.df
    );
    Ok(())
}
