mod common;

use presage::ir::{parse_ir, print_ir, validate, DiagCode, InstKind, ValueType};
use presage::kernels;
use proptest::prelude::*;

const FOO1: &str = "
; strided store
func @foo1(%n: i64, %a: addr[f64 x %n*2]) -> results(%a)
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

fn codes(src: &str) -> Vec<DiagCode> {
    parse_ir(src).expect_err("should be rejected").codes()
}

#[test]
fn parses_a_loop() {
    let f = parse_ir(FOO1).unwrap();
    assert_eq!(f.name, "foo1");
    assert_eq!(f.blocks.len(), 3);
    assert_eq!(f.params.len(), 2);
    assert_eq!(f.ty(f.find_value("a").unwrap()), ValueType::Addr);
    let body = f.find_block("body").unwrap();
    assert!(matches!(f.block(body).insts[0].kind, InstKind::Phi(ref inc) if inc.len() == 2));
    assert_eq!(f.results, vec![f.find_value("a").unwrap()]);
}

#[test]
fn print_then_parse_is_identity() {
    let f = parse_ir(FOO1).unwrap();
    let text = print_ir(&f);
    let g = parse_ir(&text).unwrap();
    assert_eq!(f, g);
    assert_eq!(print_ir(&g), text);
}

#[test]
fn float_constants_survive_round_trip() {
    let src = "func @f(%a: addr[f64 x 1]) -> results(%a)\nentry:\n  %z = const 0\n  %x = const 0.1\n  %y = const -2.5e-300\n  %s = fadd %x, %y\n  %p = gep %a, %z, 8\n  store %s, %p\n  ret\n";
    let f = parse_ir(src).unwrap();
    assert_eq!(parse_ir(&print_ir(&f)).unwrap(), f);
}

#[test]
fn detector_marks_round_trip() {
    let f = kernels::build("foo1").unwrap();
    let (t, _) = presage::transform(&f).unwrap();
    let text = print_ir(&t);
    assert!(text.contains("!detector"));
    let back = parse_ir(&text).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.count_insts(|i| i.detector), 5);
}

#[test]
fn syntax_errors_are_located() {
    let err = parse_ir("func @f() -> results()\nentry:\n  %x = frob 1\n  ret\n").unwrap_err();
    let presage::ir::IrError::Parse(p) = err else { panic!("expected a parse error") };
    assert_eq!(p.code, DiagCode::Syntax);
    assert_eq!(p.line, 3);
}

#[test]
fn empty_input_is_a_syntax_error() {
    assert_eq!(codes(""), vec![DiagCode::Syntax]);
}

#[test]
fn use_of_undefined_value() {
    let src = "func @f() -> results()\nentry:\n  %x = add %y, %y\n  ret\n";
    assert!(codes(src).contains(&DiagCode::UnknownValue));
}

#[test]
fn branch_to_unknown_block() {
    let src = "func @f() -> results()\nentry:\n  br nowhere\n";
    assert!(codes(src).contains(&DiagCode::UnknownBlock));
}

#[test]
fn duplicate_definition() {
    let src = "func @f() -> results()\nentry:\n  %x = const 1\n  %x = const 2\n  ret\n";
    assert_eq!(codes(src), vec![DiagCode::DuplicateDef]);
}

#[test]
fn missing_terminator() {
    let src = "func @f() -> results()\nentry:\n  %x = const 1\n";
    assert!(codes(src).contains(&DiagCode::MissingTerminator));
}

#[test]
fn phi_after_non_phi() {
    let src = "func @f() -> results()\nentry:\n  br b\nb:\n  %x = const 1\n  %p = phi [%x, entry]\n  ret\n";
    assert!(codes(src).contains(&DiagCode::PhiNotLeading));
}

#[test]
fn phi_must_cover_predecessors_exactly() {
    let src = "func @f(%c: i64) -> results()\nentry:\n  %z = const 0\n  condbr %c, a, b\na:\n  br j\nb:\n  br j\nj:\n  %p = phi [%z, a]\n  ret\n";
    assert!(codes(src).contains(&DiagCode::PhiEdgeMismatch));
}

#[test]
fn use_not_dominated_by_def() {
    let src = "func @f(%c: i64) -> results()\nentry:\n  condbr %c, a, j\na:\n  %x = const 1\n  br j\nj:\n  %y = add %x, %x\n  ret\n";
    assert!(codes(src).contains(&DiagCode::SsaDominance));
}

#[test]
fn type_mismatch() {
    let src = "func @f() -> results()\nentry:\n  %x = const 1\n  %y = fadd %x, %x\n  ret\n";
    assert!(codes(src).contains(&DiagCode::TypeMismatch));
}

#[test]
fn gep_on_integer_base() {
    let src = "func @f() -> results()\nentry:\n  %x = const 1\n  %p = gep %x, %x, 8\n  ret\n";
    let c = codes(src);
    assert!(c.contains(&DiagCode::TypeMismatch) || c.contains(&DiagCode::InvalidGep), "{c:?}");
}

#[test]
fn mixed_element_sizes_on_one_base() {
    let src = "func @f(%a: addr[f64]) -> results()\nentry:\n  %z = const 0\n  %p = gep %a, %z, 8\n  %q = gep %a, %z, 4\n  ret\n";
    let c = codes(src);
    assert!(c.contains(&DiagCode::MixedElementSize), "{c:?}");
}

#[test]
fn entry_with_predecessor() {
    let src = "func @f() -> results()\nentry:\n  br entry\n";
    assert!(codes(src).contains(&DiagCode::EntryHasPreds));
}

#[test]
fn unreachable_block() {
    let src = "func @f() -> results()\nentry:\n  ret\ndead:\n  ret\n";
    assert!(codes(src).contains(&DiagCode::UnreachableBlock));
}

#[test]
fn result_must_be_an_array() {
    let src = "func @f(%n: i64) -> results(%n)\nentry:\n  ret\n";
    assert!(codes(src).contains(&DiagCode::InvalidResult));
}

#[test]
fn validation_of_kernels_is_clean() {
    for k in kernels::corpus() {
        assert!(validate(&k.build()).is_empty(), "{}", k.name);
    }
}

#[test]
fn corpus_round_trips() {
    for k in kernels::corpus() {
        let f = k.build();
        let text = print_ir(&f);
        let g = parse_ir(&text).unwrap_or_else(|e| panic!("{}: {e}", k.name));
        assert_eq!(g, f, "{}", k.name);
        assert_eq!(print_ir(&g), text, "{}", k.name);
    }
}

#[test]
fn shipped_kernel_files_match_the_builders() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("kernels");
    for k in kernels::corpus() {
        let path = dir.join(format!("{}.pir", k.name));
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(parse_ir(&text).unwrap(), k.build(), "{}", k.name);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn generated_programs_round_trip(p in common::program_with_derived()) {
        let f = common::build(&p);
        let text = print_ir(&f);
        let g = parse_ir(&text).unwrap();
        prop_assert_eq!(&g, &f);
        prop_assert_eq!(print_ir(&g), text);
    }

    #[test]
    fn transformed_programs_round_trip(p in common::program_with_derived()) {
        let (t, _) = presage::transform(&common::build(&p)).unwrap();
        let text = print_ir(&t);
        prop_assert_eq!(parse_ir(&text).unwrap(), t);
    }
}
