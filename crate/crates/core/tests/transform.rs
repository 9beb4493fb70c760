mod common;

use presage::cfg::analyze;
use presage::interp::{run, ErrorModel, FaultSpec, RunConfig, Status, TraceRecord};
use presage::ir::{parse_ir, print_ir, BinOp, Function, InstKind, ValueId};
use presage::kernels;
use presage::transform::{
    create_inter_block_chains, transform, transform_with, update_inter_block_chains, Pass,
    TransformError, TransformOptions,
};
use proptest::prelude::*;

fn parse(src: &str) -> Function {
    parse_ir(src).unwrap_or_else(|e| panic!("{e}"))
}

fn def(f: &Function, name: &str) -> InstKind {
    f.def_inst(f.find_value(name).unwrap()).unwrap().kind.clone()
}

fn val(f: &Function, name: &str) -> ValueId {
    f.find_value(name).unwrap_or_else(|| panic!("no %{name}"))
}

const HEADER_LOOP: &str = "func @h(%n: i64, %a: addr[f64 x %n]) -> results(%a)
entry:
  %z = const 0
  %one = const 1
  br head
head:
  %i = phi [%z, entry], [%i.next, body]
  %go = icmp lt %i, %n
  condbr %go, body, exit
body:
  %p = gep %a, %i, 8
  %x = sitofp %i
  store %x, %p
  %i.next = add %i, %one
  br head
exit:
  ret
";

#[test]
fn foo1_becomes_a_relative_chain() {
    let f = kernels::build("foo1").unwrap();
    let (t, rep) = transform(&f).unwrap();
    let body = t.find_block("i.body").unwrap();
    let phis: Vec<String> = t
        .block(body)
        .insts
        .iter()
        .filter(|i| i.kind.is_phi())
        .map(|i| t.name_of(i.result.unwrap()).to_string())
        .collect();
    assert!(phis.contains(&"a.rb.i.body".to_string()), "{phis:?}");
    let InstKind::Gep { base, index, elem_size } = def(&t, "p") else { panic!() };
    assert_eq!(base, val(&t, "a.rb.i.body"));
    assert_eq!(elem_size, 8);
    assert_eq!(
        def(&t, t.name_of(index)),
        InstKind::Bin(BinOp::Sub, val(&t, "id"), val(&t, "a.ri.i.body"))
    );
    assert_eq!((rep.total_geps, rep.chained, rep.skipped, rep.detectors), (1, 1, 0, 1));
}

#[test]
fn transformed_foo1_matches_foo2() {
    let (t, _) = transform_with(
        &kernels::build("foo1").unwrap(),
        TransformOptions { detectors: false },
    )
    .unwrap();
    let foo2 = kernels::build("foo2").unwrap();
    let spec = kernels::spec("foo1").unwrap();
    for seed in 0..20 {
        let (mem, args) = kernels::gen_inputs(&spec, seed);
        let a = run(&t, &mem, &args, &RunConfig::fault_free(1 << 20)).unwrap();
        let b = run(&foo2, &mem, &args, &RunConfig::fault_free(1 << 20)).unwrap();
        assert_eq!(a.results, b.results);
    }
}

#[test]
fn second_same_class_gep_chains_off_the_first() {
    let f = parse(
        "func @f(%a: addr[f64 x 8]) -> results(%a)
entry:
  %i1 = const 2
  %i2 = const 5
  %p = gep %a, %i1, 8
  %q = gep %a, %i2, 8
  %x = load %p : f64
  store %x, %q
  ret
",
    );
    let (t, rep) = transform(&f).unwrap();
    let InstKind::Gep { base, index, .. } = def(&t, "q") else { panic!() };
    assert_eq!(base, val(&t, "p"));
    assert_eq!(def(&t, t.name_of(index)), InstKind::Bin(BinOp::Sub, val(&t, "i2"), val(&t, "i1")));
    // The first gep starts from the seed (base, 0).
    let InstKind::Gep { base, index, .. } = def(&t, "p") else { panic!() };
    assert_eq!(base, val(&t, "a"));
    let InstKind::Bin(BinOp::Sub, id, zero) = def(&t, t.name_of(index)) else { panic!() };
    assert_eq!(id, val(&t, "i1"));
    assert_eq!(t.name_of(zero), "presage.zero");
    assert_eq!(rep.chained, 2);
    // Straight-line code needs no chain phis.
    assert_eq!(rep.phis, 0);
}

#[test]
fn entry_seed_is_base_and_zero() {
    let f = parse(HEADER_LOOP);
    let facts = analyze(&f).unwrap();
    let mut g = f.clone();
    let map = create_inter_block_chains(&mut g, &facts);
    let a = val(&g, "a");
    let seed = map.slot(presage::ir::BlockId::ENTRY, a).unwrap();
    assert!(!seed.is_phi);
    assert_eq!(seed.addr, a);
    assert!(matches!(
        g.def_inst(seed.idx).unwrap().kind,
        InstKind::Const(presage::ir::Constant::Int(0))
    ));
}

#[test]
fn loop_with_gep_only_in_body() {
    let f = parse(HEADER_LOOP);
    let facts = analyze(&f).unwrap();
    let mut g = f.clone();
    let mut map = create_inter_block_chains(&mut g, &facts);
    let (a, head, body, entry) = (
        val(&g, "a"),
        g.find_block("head").unwrap(),
        g.find_block("body").unwrap(),
        g.find_block("entry").unwrap(),
    );
    // The back-edge slot comes straight from the body's last gep.
    assert_eq!(map.incoming(head, a, body), Some((val(&g, "p"), val(&g, "i"))));
    assert_eq!(map.incoming(head, a, entry), None);
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass1).unwrap();
    let seed = map.slot(entry, a).unwrap();
    assert_eq!(map.incoming(head, a, entry), Some((seed.addr, seed.idx)));
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass2).unwrap();
    assert_eq!(map.unset_slots(), 0);
}

#[test]
fn pass_through_latch_is_filled_in_the_second_pass() {
    let f = parse(
        "func @l(%n: i64, %a: addr[f64 x %n]) -> results(%a)
entry:
  %z = const 0
  %one = const 1
  br head
head:
  %i = phi [%z, entry], [%i.next, latch]
  %p = gep %a, %i, 8
  %x = sitofp %i
  store %x, %p
  br latch
latch:
  %i.next = add %i, %one
  %go = icmp lt %i.next, %n
  condbr %go, head, exit
exit:
  ret
",
    );
    let facts = analyze(&f).unwrap();
    let mut g = f.clone();
    let mut map = create_inter_block_chains(&mut g, &facts);
    let (a, head, latch) = (val(&g, "a"), g.find_block("head").unwrap(), g.find_block("latch").unwrap());
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass1).unwrap();
    assert_eq!(map.incoming(head, a, latch), None);
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass2).unwrap();
    let latch_slot = map.slot(latch, a).unwrap();
    assert!(latch_slot.is_phi);
    assert_eq!(map.incoming(head, a, latch), Some((latch_slot.addr, latch_slot.idx)));
    assert_eq!(map.unset_slots(), 0);
}

#[test]
fn pass_through_diamond_arm_forwards_its_phi() {
    let f = parse(
        "func @d(%c: i64, %a: addr[f64 x 8]) -> results(%a)
entry:
  %k = const 1
  %p = gep %a, %k, 8
  %x = load %p : f64
  condbr %c, l, r
l:
  %m = const 2
  %q = gep %a, %m, 8
  store %x, %q
  br j
r:
  br j
j:
  %s = gep %a, %k, 8
  store %x, %s
  ret
",
    );
    let facts = analyze(&f).unwrap();
    let mut g = f.clone();
    let mut map = create_inter_block_chains(&mut g, &facts);
    let a = val(&g, "a");
    let (l, r, j) = (g.find_block("l").unwrap(), g.find_block("r").unwrap(), g.find_block("j").unwrap());
    assert_eq!(map.incoming(j, a, l), Some((val(&g, "q"), val(&g, "m"))));
    assert_eq!(map.incoming(j, a, r), None);
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass1).unwrap();
    let rs = map.slot(r, a).unwrap();
    assert_eq!(map.incoming(j, a, r), Some((rs.addr, rs.idx)));
    // The pass-through arm's own phi is seeded from entry's last gep.
    let entry = presage::ir::BlockId::ENTRY;
    assert_eq!(map.incoming(r, a, entry), Some((val(&g, "p"), val(&g, "k"))));
}

#[test]
fn three_predecessors_give_three_slots() {
    let f = parse(
        "func @t(%c: i64, %a: addr[f64 x 8]) -> results(%a)
entry:
  condbr %c, l, r
l:
  condbr %c, j, m
m:
  br j
r:
  br j
j:
  %k = const 3
  %p = gep %a, %k, 8
  %x = load %p : f64
  store %x, %p
  ret
",
    );
    let facts = analyze(&f).unwrap();
    let mut g = f.clone();
    let mut map = create_inter_block_chains(&mut g, &facts);
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass1).unwrap();
    update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass2).unwrap();
    let j = g.find_block("j").unwrap();
    let a = val(&g, "a");
    assert!(map.has_phi(j, a));
    assert_eq!(facts.preds[j.index()].len(), 3);
    for &pred in &facts.preds[j.index()] {
        assert!(map.incoming(j, a, pred).is_some());
    }
}

#[test]
fn geps_on_derived_bases_are_skipped() {
    let f = kernels::build("fdtd2d-mini").unwrap();
    let (t, rep) = transform(&f).unwrap();
    assert_eq!(rep.skipped, 1);
    assert_eq!(rep.chained + rep.skipped, rep.total_geps);
    let hz_row = rep.bases.iter().find(|b| b.base == "hz.row").unwrap();
    assert_eq!(hz_row.skipped, 1);
    // The skipped gep still addresses through the row pointer.
    let InstKind::Gep { base, .. } = def(&t, "p10") else { panic!() };
    assert_eq!(t.name_of(base), "hz.row");
}

#[test]
fn function_without_geps_is_unchanged() {
    let f = parse("func @z(%n: i64) -> results()\nentry:\n  %x = add %n, %n\n  ret\n");
    let (t, rep) = transform(&f).unwrap();
    assert_eq!(t, f);
    assert_eq!((rep.total_geps, rep.chained, rep.phis, rep.detectors), (0, 0, 0, 0));
    assert!(rep.bases.is_empty());
}

#[test]
fn transform_does_not_touch_its_input() {
    let f = kernels::build("lu-mini").unwrap();
    let before = print_ir(&f);
    transform(&f).unwrap();
    assert_eq!(print_ir(&f), before);
}

#[test]
fn irreducible_input_is_rejected() {
    let f = parse(
        "func @i(%c: i64, %a: addr[f64 x 4]) -> results(%a)
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
",
    );
    assert!(matches!(transform(&f), Err(TransformError::Irreducible(_, _))));
}

#[test]
fn mid_loop_bit6_flip_is_detected_at_exit() {
    let f = kernels::build("foo1").unwrap();
    let (t, _) = transform(&f).unwrap();
    let (mem, args) = presage::kernels::inputs_from_scalars(&t, &[("n".into(), presage::Arg::Int(16))], 0).unwrap();
    // Iteration 5 stores a[8]; bit 6 of that address is set, so the flip
    // moves the rest of the chain 8 elements back, still inside the array.
    let fault = FaultSpec { model: ErrorModel::Em1, k: 5, bit: 6 };
    let cfg = RunConfig { budget: 1 << 20, fault: Some(fault), trace: false };
    let r = run(&t, &mem, &args, &cfg).unwrap();
    assert_eq!(r.status, Status::Completed);
    assert!(r.injected);
    assert!(r.detect_count >= 1);
    let ff = run(&t, &mem, &args, &RunConfig::fault_free(1 << 20)).unwrap();
    assert_eq!(ff.detect_count, 0);
}

#[test]
fn flip_in_skipped_gep_goes_unnoticed() {
    let f = parse(
        "func @g(%a: addr[f64 x 8]) -> results(%a)
entry:
  %z = const 0
  %k = const 3
  %one = const 1.0
  %r = gep %a, %z, 8
  %p = gep %r, %k, 8
  %x = load %p : f64
  %y = fadd %x, %one
  store %y, %p
  ret
",
    );
    let (t, rep) = transform(&f).unwrap();
    assert_eq!((rep.chained, rep.skipped), (1, 1));
    let (mem, args) = presage::kernels::inputs_from_scalars(&t, &[], 1).unwrap();
    let ff = run(&t, &mem, &args, &RunConfig::fault_free(1000)).unwrap();
    let fault = FaultSpec { model: ErrorModel::Em1, k: 2, bit: 3 };
    let r = run(&t, &mem, &args, &RunConfig { budget: 1000, fault: Some(fault), trace: false }).unwrap();
    assert_eq!(r.status, Status::Completed);
    assert_ne!(r.results, ff.results);
    assert_eq!(r.detect_count, 0);
}

#[test]
fn detectors_are_marked_and_counted() {
    for k in kernels::corpus() {
        let f = k.build();
        let (t, rep) = transform(&f).unwrap();
        let facts = analyze(&f).unwrap();
        assert_eq!(rep.detectors, facts.bases.len() * facts.exit_blocks.len(), "{}", k.name);
        assert_eq!(t.count_insts(|i| i.detector), 5 * rep.detectors, "{}", k.name);
        assert_eq!(
            t.count_insts(|i| i.detector && matches!(i.kind, InstKind::Detect(_))),
            rep.detectors
        );
    }
}

fn geps(trace: &[TraceRecord]) -> Vec<&TraceRecord> {
    trace.iter().filter(|r| r.opcode == "gep" && !r.detector).collect()
}

/// Original base parameter of every gep, by gep name.
fn gep_bases(f: &Function) -> std::collections::HashMap<String, ValueId> {
    f.blocks
        .iter()
        .flat_map(|b| &b.insts)
        .filter_map(|i| match i.kind {
            InstKind::Gep { base, .. } => Some((f.name_of(i.result.unwrap()).to_string(), base)),
            _ => None,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn semantics_are_preserved(p in common::program_with_derived(), n in 1i64..10, fill in -2.0f64..2.0) {
        let f = common::build(&p);
        let (t, rep) = transform(&f).unwrap();
        prop_assert_eq!(rep.chained + rep.skipped, rep.total_geps);
        let (mem, args) = common::inputs(&f, n, fill);
        let a = run(&f, &mem, &args, &RunConfig::fault_free(1 << 22)).unwrap();
        let b = run(&t, &mem, &args, &RunConfig::fault_free(1 << 22)).unwrap();
        prop_assert_eq!(a.status, Status::Completed);
        prop_assert_eq!(b.status, Status::Completed);
        prop_assert_eq!(a.results, b.results);
        prop_assert_eq!(b.detect_count, 0);
        prop_assert_eq!(a.em1_sites, b.em1_sites);
    }

    #[test]
    fn every_gep_computes_the_fixed_base_address(p in common::program_with_derived(), n in 1i64..8) {
        let f = common::build(&p);
        let (t, _) = transform(&f).unwrap();
        let (mem, args) = common::inputs(&f, n, 0.5);
        let cfg = RunConfig { budget: 1 << 22, fault: None, trace: true };
        let a = run(&f, &mem, &args, &cfg).unwrap();
        let b = run(&t, &mem, &args, &cfg).unwrap();
        let ga: Vec<u64> = geps(&a.trace).iter().map(|r| r.bits).collect();
        let gb: Vec<u64> = geps(&b.trace).iter().map(|r| r.bits).collect();
        prop_assert_eq!(ga, gb);
    }

    #[test]
    fn chained_flip_shifts_every_later_same_class_address(
        p in common::program(),
        n in 2i64..8,
        pick in any::<prop::sample::Index>(),
        bit in 0u32..64,
    ) {
        let f = common::build(&p);
        let (t, _) = transform(&f).unwrap();
        let (mem, args) = common::inputs(&f, n, 0.5);
        let clean = run(&t, &mem, &args, &RunConfig { budget: 1 << 22, fault: None, trace: true }).unwrap();
        prop_assume!(clean.em1_sites > 0);
        let k = pick.index(clean.em1_sites as usize) as u64 + 1;
        let cfg = RunConfig { budget: 1 << 24, fault: Some(FaultSpec { model: ErrorModel::Em1, k, bit }), trace: true };
        let bad = run(&t, &mem, &args, &cfg).unwrap();
        let bases = gep_bases(&f);
        let (gc, gb) = (geps(&clean.trace), geps(&bad.trace));
        let hit = (k - 1) as usize;
        prop_assert!(gb.len() > hit);
        let class = bases[t.name_of(gb[hit].value)];
        let delta = gb[hit].bits.wrapping_sub(gc[hit].bits);
        prop_assert_eq!(gb[hit].bits ^ gc[hit].bits, 1u64 << bit);
        for (c, b) in gc.iter().zip(&gb).take(hit) {
            prop_assert_eq!(c.bits, b.bits);
        }
        for (c, b) in gc.iter().zip(&gb).skip(hit + 1) {
            prop_assert_eq!(c.value, b.value);
            if bases[t.name_of(c.value)] == class {
                prop_assert_eq!(b.bits.wrapping_sub(c.bits), delta);
            } else {
                prop_assert_eq!(b.bits, c.bits);
            }
        }
    }

    #[test]
    fn no_phi_slot_is_left_unset(p in common::program_with_derived()) {
        let f = common::build(&p);
        let facts = analyze(&f).unwrap();
        let mut g = f.clone();
        let mut map = create_inter_block_chains(&mut g, &facts);
        update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass1).unwrap();
        // Only back-edge slots may still be open between the passes.
        for b in g.block_ids() {
            for &base in &facts.bases {
                for &pred in &facts.preds[b.index()] {
                    if map.has_phi(b, base) && map.incoming(b, base, pred).is_none() {
                        prop_assert!(facts.is_back_edge(pred, b));
                    }
                }
            }
        }
        update_inter_block_chains(&mut g, &mut map, &facts, Pass::Pass2).unwrap();
        prop_assert_eq!(map.unset_slots(), 0);
        prop_assert_eq!(map.len(), g.blocks.len() * facts.bases.len());
    }
}
