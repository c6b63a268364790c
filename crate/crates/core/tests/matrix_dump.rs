mod common;

use clustevo::matrices::{read_matrix_records, write_matrix_record, MatrixKind};
use common::*;
use ndarray::Array2;

#[test]
fn records_round_trip() {
    let kinds = [
        MatrixKind::Distance,
        MatrixKind::Affinity,
        MatrixKind::Gaussian(3),
        MatrixKind::Adjacency,
    ];
    let mut buf = Vec::new();
    let mut expect = Vec::new();
    for (i, kind) in kinds.into_iter().enumerate() {
        let n = i + 1;
        let m = Array2::from_shape_fn((n, n), |(a, b)| (a * 10 + b) as f64 / 7.0 - i as f64);
        write_matrix_record(&mut buf, kind, &m).unwrap();
        expect.push((kind, m));
    }
    assert_eq!(buf.len(), (1..=4).map(|n| 8 + 8 * n * n).sum::<usize>());
    assert_eq!(&buf[..8], &[1, 0, 0, 0, 0, 0, 0, 0]);
    assert_eq!(read_matrix_records(buf.as_slice()).unwrap(), expect);
}

#[test]
fn truncated_or_unknown_records_are_data_errors() {
    let m = Array2::from_elem((3, 3), 0.5);
    let mut buf = Vec::new();
    write_matrix_record(&mut buf, MatrixKind::Affinity, &m).unwrap();
    let cut = &buf[..buf.len() - 5];
    assert_eq!(read_matrix_records(cut).unwrap_err().exit_code(), 3);

    let mut bad = buf.clone();
    bad[4] = 0x77;
    assert_eq!(read_matrix_records(bad.as_slice()).unwrap_err().exit_code(), 3);

    assert!(read_matrix_records(&[][..]).unwrap().is_empty());
}

#[test]
fn dumps_hold_one_record_per_date_and_feed_offsets() {
    let (dir, config) = workspace("m_values = [2]\n");
    let outdir = dir.path().join("out");
    let o = outdir.to_str().unwrap();
    let out = clustevo(&["-c", config.to_str().unwrap(), "-o", o, "--dump-matrices", "dual"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    for series in ["x", "y"] {
        for (name, kind) in [
            ("d", MatrixKind::Distance),
            ("aff", MatrixKind::Affinity),
            ("g2", MatrixKind::Gaussian(2)),
            ("adj", MatrixKind::Adjacency),
        ] {
            let p = outdir.join(series).join(format!("matrices_{name}.bin"));
            let recs = read_matrix_records(std::fs::File::open(&p).unwrap()).unwrap();
            assert_eq!(recs.len(), DAYS, "{}", p.display());
            for (k, m) in &recs {
                assert_eq!(*k, kind);
                assert_eq!(m.dim(), (ENTITIES, ENTITIES));
            }
        }
    }
    assert!(!outdir.join("x/matrices_g1.bin").exists());

    let x = outdir.join("x/matrices_aff.bin");
    let y = outdir.join("y/matrices_aff.bin");
    let out = clustevo(&[
        "--tau-scan",
        "0",
        "20",
        "offsets",
        "--x-dump",
        x.to_str().unwrap(),
        "--y-dump",
        y.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["offset"], LAG as i64);
    assert_eq!(v["kind"], "consistency:aff");
    assert_eq!(v["curve"].as_array().unwrap().len(), 21);

    let out = clustevo(&[
        "offsets",
        "--kind",
        "adj",
        "--x-dump",
        x.to_str().unwrap(),
        "--y-dump",
        y.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
