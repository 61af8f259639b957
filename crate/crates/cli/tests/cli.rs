use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_parterm");

const COLUMNS: [&str; 18] = [
    "program",
    "module_index",
    "nslaves",
    "backend",
    "chunk_size",
    "master_computes",
    "repeat",
    "t_wall_ns",
    "t_distribute_ns",
    "t_compute_max_ns",
    "t_local_sort_max_ns",
    "t_final_merge_ns",
    "terms_in",
    "terms_generated",
    "terms_out",
    "messages",
    "serialized_bytes",
    "handle_transfers",
];

fn programs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn parterm(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("spawn parterm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn run_prints_binomial_expansion() {
    let file = programs().join("binomial.pt");
    for extra in [
        &[][..],
        &["--slaves", "3", "--backend", "mp", "--chunk", "1"],
        &["--slaves", "0"],
    ] {
        let mut args = vec!["run", file.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = parterm(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert_eq!(stdout(&o), "F = x^2+2*x*y+y^2\n");
    }
}

#[test]
fn run_writes_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "p.pt",
        "symbols a,b; local G = a-b; local H = 3; multiply a+b; .sort .end",
    );
    let out = dir.path().join("out.txt");
    let o = parterm(&[
        "run",
        &input,
        "--master-computes",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        "G = a^2-b^2\nH = 3*a+3*b\n"
    );
}

#[test]
fn verify_passes_and_reports_the_grid() {
    let file = programs().join("binomial.pt");
    let o = parterm(&[
        "verify",
        file.to_str().unwrap(),
        "--slaves",
        "1,2,4",
        "--chunk",
        "1,1000",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).starts_with("ok: 24 configurations"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn bench_writes_one_row_per_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let file = programs().join("binomial.pt");
    let o = parterm(&[
        "bench",
        file.to_str().unwrap(),
        "--slaves",
        "1,2,4,8",
        "--backend",
        "mp,sm",
        "--repeat",
        "5",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    let mut r = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        assert_eq!(&row[0], "binomial");
        assert_eq!(&row[6], "5");
        for i in 7..18 {
            row[i]
                .parse::<u64>()
                .unwrap_or_else(|_| panic!("column {} not numeric", COLUMNS[i]));
        }
        let (bytes, handles): (u64, u64) = (row[16].parse().unwrap(), row[17].parse().unwrap());
        match &row[3] {
            "mp" => assert!(bytes > 0 && handles == 0),
            "sm" => assert!(bytes == 0 && handles > 0),
            other => panic!("backend {other}"),
        }
        assert_eq!(&row[14], "3");
    }

    let dat = std::fs::read_to_string(dir.path().join("bench.dat")).unwrap();
    let blocks: Vec<&str> = dat.split("\n\n\n").collect();
    assert_eq!(blocks.len(), 2);
    for b in blocks {
        let lines: Vec<&str> = b.trim().lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1 ") && lines[1].split(' ').nth(2) == Some("1.000000"));
    }
}

#[test]
fn bench_generates_workloads() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("g.csv");
    let o = parterm(&[
        "bench",
        "--generate",
        "expand:2:0",
        "--slaves",
        "1,2",
        "--backend",
        "sm",
        "--chunk",
        "1,4",
        "--repeat",
        "1",
        "--normalize",
        "sequential",
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = csv::Reader::from_path(&csv_path).unwrap().records().count();
    // 2 slave counts x 2 chunk sizes x 2 modules
    assert_eq!(rows, 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.pt", "symbols x;\nlocal F = y;\n.sort .end");
    let good = programs().join("binomial.pt");
    let good = good.to_str().unwrap();
    let csv = dir.path().join("x.csv");
    let csv = csv.to_str().unwrap();

    assert_eq!(parterm(&["--help"]).status.code(), Some(0));
    assert_eq!(parterm(&[]).status.code(), Some(1));
    assert_eq!(
        parterm(&["run", good, "--backend", "tcp"]).status.code(),
        Some(1)
    );
    assert_eq!(parterm(&["verify", good]).status.code(), Some(1));
    assert_eq!(
        parterm(&[
            "bench",
            good,
            "--slaves",
            "2",
            "--backend",
            "sm",
            "--csv",
            csv
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        parterm(&[
            "bench",
            "--generate",
            "expand:x:1",
            "--slaves",
            "1",
            "--backend",
            "sm",
            "--csv",
            csv
        ])
        .status
        .code(),
        Some(1)
    );

    let o = parterm(&["run", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2, column 11"));
    assert_eq!(
        parterm(&["verify", &bad, "--slaves", "1"]).status.code(),
        Some(2)
    );

    let missing = dir.path().join("missing.pt");
    assert_eq!(
        parterm(&["run", missing.to_str().unwrap()]).status.code(),
        Some(4)
    );
}
