//! RMSE, MAPE and R-squared over labelled prediction/truth pairs, with the
//! averaged table rows written by the evaluation command.

use roadghg::metrics::{mape, r_squared, rmse, with_average_rows, write_metric_table, EvalPair, MetricRow};

fn main() -> roadghg::Result<()> {
    let groups = [
        ("Luton", vec![(48200.0, 51000.0), (7900.0, 8300.0), (3100.0, 2900.0)]),
        ("Trafford", vec![(66000.0, 61000.0), (9100.0, 9900.0), (5200.0, 5500.0)]),
    ];
    let mut rows = Vec::new();
    for (la, values) in &groups {
        let pairs: Vec<EvalPair> = values.iter().map(|&(p, t)| EvalPair::new(p, t)).collect();
        println!(
            "{la:<10} rmse {:>8.1} mape {:.4} r2 {:.4}",
            rmse(&pairs)?,
            mape(&pairs)?.value,
            r_squared(&pairs)?
        );
        rows.push(MetricRow::from_pairs("motorways", la, &pairs)?);
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("table.csv");
    write_metric_table(&path, ["la", "road_type", "rmse", "mape"], &with_average_rows(&rows))?;
    print!("{}", std::fs::read_to_string(&path).expect("table"));
    Ok(())
}
