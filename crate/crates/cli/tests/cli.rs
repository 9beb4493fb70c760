use std::path::Path;
use std::process::{Command, Output};

fn presage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_presage"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const FOO1: &str = "func @foo1(%n: i64, %a: addr[f64 x %n*2]) -> results(%a)
entry:
  %one = const 1
  %two = const 2
  %go = icmp lt %one, %n
  condbr %go, body, exit
body:
  %i = phi [%one, entry], [%i.next, body]
  %t = mul %two, %i
  %id = sub %t, %two
  %x = sitofp %i
  %p = gep %a, %id, 8
  store %x, %p
  %i.next = add %i, %one
  %more = icmp lt %i.next, %n
  condbr %more, body, exit
exit:
  ret
";

#[test]
fn transform_writes_ir_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("foo1.pir");
    std::fs::write(&src, FOO1).unwrap();
    let out = dir.path().join("out.pir");
    let rep = dir.path().join("rep.json");
    let o = presage(&[
        "transform",
        src.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--report",
        rep.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("!detector"));
    presage::ir::parse_ir(&text).unwrap();
    let r = json(&rep);
    assert_eq!(r["chained"], 1);
    assert_eq!(r["detectors"], 1);
}

#[test]
fn transform_without_detectors() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("foo1.pir");
    std::fs::write(&src, FOO1).unwrap();
    let o = presage(&["transform", src.to_str().unwrap(), "--no-detectors"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(!text.contains("detect"));
    assert!(text.contains(".rid = sub"));
}

#[test]
fn run_reports_crash_for_a_far_flip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("foo1.pir");
    std::fs::write(&src, FOO1).unwrap();
    let trace = dir.path().join("t.csv");
    let o = presage(&[
        "run",
        src.to_str().unwrap(),
        "--arg",
        "n=10",
        "--inject",
        "em1:1:40",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["fault_free"]["em1_sites"], 9);
    assert_eq!(doc["faulty"]["status"], "crash");
    assert_eq!(doc["outcome"]["kind"], "crash");
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("step,instruction,opcode,value\n"));
    assert!(csv.contains(",%p,gep,"));
}

#[test]
fn run_needs_all_scalars() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("foo1.pir");
    std::fs::write(&src, FOO1).unwrap();
    let o = presage(&["run", src.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("%n"));
}

#[test]
fn cfg_dump_lists_back_edges() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("foo1.pir");
    std::fs::write(&src, FOO1).unwrap();
    let o = presage(&["cfg", src.to_str().unwrap()]);
    assert!(o.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["back_edges"], serde_json::json!([["body", "body"]]));
    assert_eq!(doc["bases"], serde_json::json!(["a"]));
    assert_eq!(doc["reducible"], true);
}

#[test]
fn kernels_list_and_emit() {
    let o = presage(&["kernels", "--list"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["foo1", "jacobi2d-mini", "fdtd2d-mini", "cholesky-mini"] {
        assert!(text.contains(name));
    }
    let dir = tempfile::tempdir().unwrap();
    let o = presage(&["kernels", "--emit", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let n = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(n, presage::kernels::names().len());
}

#[test]
fn campaign_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for variant in ["native", "presage"] {
        for model in ["em1", "em2"] {
            let out = dir.path().join(format!("{variant}_{model}.json"));
            let o = presage(&[
                "campaign", "--kernel", "trmm-mini", "--variant", variant, "--model", model,
                "--runs", "40", "--seed", "7", "-o", out.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            let r = json(&out);
            assert_eq!(r["config"]["runs"], 40);
            let c = &r["counts"];
            let total: u64 = ["sdc", "benign", "crash", "hang", "no_site"]
                .iter()
                .map(|k| c[k].as_u64().unwrap())
                .sum();
            assert_eq!(total, 40);
            reports.push(out);
        }
    }
    let cmp = dir.path().join("cmp.json");
    let mut args = vec!["compare"];
    args.extend(reports.iter().map(|p| p.to_str().unwrap()));
    args.extend(["-o", cmp.to_str().unwrap()]);
    let o = presage(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&cmp);
    let k = &doc["kernels"][0];
    assert_eq!(k["kernel"], "trmm-mini");
    assert!(k["dic_overhead"].as_f64().unwrap() > 1.0);
    assert!(k["sets"]["presage_em2"].is_object());
}

#[test]
fn campaign_is_reproducible_and_exports_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("r{i}.json"));
        let csv = dir.path().join(format!("r{i}.csv"));
        let o = presage(&[
            "campaign", "--kernel", "foo1", "--variant", "presage", "--runs", "30", "--seed", "3",
            "-o", out.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        bodies.push((std::fs::read(&out).unwrap(), std::fs::read_to_string(&csv).unwrap()));
    }
    assert_eq!(bodies[0], bodies[1]);
    let csv = &bodies[0].1;
    assert!(csv.starts_with("run,input_seed,sites,k,bit,outcome,detected"));
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn zero_runs_is_a_usage_error() {
    let o = presage(&["campaign", "--kernel", "foo1", "--runs", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = presage(&["transform", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_or_malformed_files_are_usage_errors() {
    let o = presage(&["transform", "/nonexistent/x.pir"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.pir");
    std::fs::write(&bad, "func @f( -> \n").unwrap();
    let o = presage(&["transform", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("SYNTAX"));
    let o = presage(&["compare", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_kernel_is_a_usage_error() {
    let o = presage(&["campaign", "--kernel", "gemm"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn irreducible_input_fails_the_transform() {
    let src = "func @f(%c: i64, %a: addr[f64 x 4]) -> results(%a)
entry:
  %z = const 0
  condbr %c, l, r
l:
  %p = gep %a, %z, 8
  br r
r:
  condbr %c, l, exit
exit:
  ret
";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("irr.pir");
    std::fs::write(&path, src).unwrap();
    let o = presage(&["transform", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("irreducible"));
}
