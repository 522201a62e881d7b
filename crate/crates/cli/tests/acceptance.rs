//! Acceptance gate.  One test per criterion; each prints a single
//! `acceptance <name>: PASS|FAIL` line (visible with `--nocapture`).

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use desing_cli::job::{build_root, parse_job};
use desing_core::ideal::Ideal;
use desing_core::mobile::{
    build_setup, coefficient_ideal, maximal_tight_shortcut, DEntry, HandicapState, SetupInput,
    Shortcut, Tag,
};
use desing_core::poly::{rat_int, BigRational, Monomial, Polynomial, SubstitutionMap, Vars};
use desing_core::resolve::{resolve, Outcome, ResolveConfig, RunResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CUSP: &str = "vars: x y\nJ: y^2 - x^3\nmode: scheme\n";
const UMBRELLA: &str = "vars: x y z\nJ: x^2 - y^2*z\nmode: scheme\n";

/// Criteria run one at a time so the timing bounds measure the work itself,
/// not contention between concurrently resolving test threads.
static TURNSTILE: Mutex<()> = Mutex::new(());

fn criterion<F: FnOnce()>(name: &str, body: F) {
    let _serial = TURNSTILE.lock().unwrap_or_else(|e| e.into_inner());
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("acceptance {name}: PASS"),
        Err(cause) => {
            println!("acceptance {name}: FAIL");
            resume_unwind(cause);
        }
    }
}

fn resolve_job(text: &str, max_steps: u64, alt_picks: bool) -> RunResult {
    let spec = parse_job(text).expect("job parses");
    let root = build_root(&spec).expect("root chart builds");
    let cfg = ResolveConfig {
        mode: spec.mode,
        max_steps,
        verify: true,
        alt_picks,
        seed: 0,
        trace: false,
    };
    resolve(root, &cfg).expect("run completes")
}

fn ideal_eq(a: &Ideal, b: &Ideal) -> bool {
    a.gens().iter().all(|g| b.contains(g).unwrap())
        && b.gens().iter().all(|g| a.contains(g).unwrap())
}

fn parse(vars: &Vars, s: &str) -> Polynomial {
    Polynomial::parse(vars, s).unwrap()
}

fn assert_resolved_and_verified(run: &RunResult) {
    assert_eq!(run.outcome, Outcome::Resolved, "run did not resolve");
    assert!(run.report.verified, "verifier reported failures");
}

// -------------------------------------------------------------------------

#[test]
fn cusp_descent_and_first_transforms() {
    criterion("cusp descent and first transforms", || {
        let start = Instant::now();
        let run = resolve_job(CUSP, 64, false);
        assert_resolved_and_verified(&run);

        let root = &run.nodes[&Vec::new()];
        let inv = root.invariant.as_ref().expect("root was processed");
        assert_eq!(inv.flatten(), vec![2, 2, 0, 0, 3, 3, 0, 0]);

        let vars = &root.chart.vars;
        let center = Ideal::new(vars, root.center.clone().expect("root has a center"));
        let at_origin = Ideal::new(vars, vec![parse(vars, "x"), parse(vars, "y")]);
        assert!(ideal_eq(&center, &at_origin), "first center is not the origin");

        // the chart whose blowup map sends y to x*y keeps the singular point
        let x_chart = run
            .nodes
            .values()
            .find(|n| {
                n.chart.parent.as_deref() == Some(&[])
                    && n.chart
                        .edge_from_parent
                        .as_ref()
                        .map(|e| e.images()[1] == parse(&n.chart.vars, "x*y"))
                        .unwrap_or(false)
            })
            .expect("x chart exists");
        let cv = &x_chart.chart.vars;

        match &x_chart.chart.mobile.handicaps {
            HandicapState::Transported { d_inside, .. } => {
                let once = vec![DEntry { label: 1, mult: 1 }];
                assert_eq!(d_inside[0], once, "top combinatorial handicap");
                assert_eq!(d_inside[1], once, "lower combinatorial handicap");
            }
            HandicapState::Literal { .. } => panic!("child chart kept literal handicaps"),
        }
        assert_eq!(x_chart.chart.exceptional.len(), 1);
        assert_eq!(x_chart.chart.exceptional[0].label, 1);
        assert_eq!(x_chart.chart.exceptional[0].equation, parse(cv, "x"));

        // divide out the transported monomial to expose the residual ideal
        let residual: Vec<Polynomial> = x_chart
            .chart
            .mobile
            .j
            .iter()
            .map(|g| g.exact_divide(&parse(cv, "x")).expect("monomial factor divides"))
            .collect();
        assert!(ideal_eq(
            &Ideal::new(cv, residual),
            &Ideal::new(cv, vec![parse(cv, "y^2 - x")])
        ));

        assert!(start.elapsed() < Duration::from_secs(10), "cusp run too slow");

        // round count is frozen as a determinism regression
        assert_eq!(run.report.rounds, 3);
        let again = resolve_job(CUSP, 64, false);
        assert_eq!(again.report.rounds, run.report.rounds);
    });
}

#[test]
fn umbrella_first_center() {
    criterion("umbrella first center", || {
        let start = Instant::now();
        let run = resolve_job(UMBRELLA, 512, false);
        assert_resolved_and_verified(&run);

        let root = &run.nodes[&Vec::new()];
        let vars = &root.chart.vars;
        let center = Ideal::new(vars, root.center.clone().expect("root has a center"));
        let origin = Ideal::new(
            vars,
            vec![parse(vars, "x"), parse(vars, "y"), parse(vars, "z")],
        );
        assert!(
            ideal_eq(&center, &origin),
            "first center is {:?}, not the origin",
            root.center
        );
        assert!(start.elapsed() < Duration::from_secs(60), "umbrella run too slow");
    });
}

#[test]
fn a_family_invariant_decrease() {
    criterion("A-family invariant decrease", || {
        let mut compared = 0usize;
        for n in 1..=4u32 {
            let start = Instant::now();
            let job = format!("vars: x y\nJ: y^2 - x^{}\nmode: scheme\n", n + 1);
            let run = resolve_job(&job, 64, false);
            assert_resolved_and_verified(&run);
            for node in run.nodes.values() {
                let (Some(inv), Some(pid)) = (&node.invariant, &node.chart.parent) else {
                    continue;
                };
                if let Some(parent_inv) = &run.nodes[pid].invariant {
                    assert!(
                        inv < parent_inv,
                        "invariant failed to drop along {} -> {} for n = {n}",
                        run.nodes[pid].chart.id_string(),
                        node.chart.id_string()
                    );
                    compared += 1;
                }
            }
            assert!(
                start.elapsed() < Duration::from_secs(60),
                "n = {n} run too slow"
            );
        }
        assert!(compared > 0, "no interior edges were compared");
    });
}

#[test]
fn bold_regular_paths() {
    criterion("bold regular paths", || {
        // a squared hyperplane: the vanishing coefficient ideal hands the
        // whole hypersurface to the center in a single step
        let run = resolve_job("vars: x y\nJ: (x + y)^2\ncontrol: 2\n", 64, false);
        assert_resolved_and_verified(&run);
        assert_eq!(run.report.steps, 1);
        let root = &run.nodes[&Vec::new()];
        let vars = &root.chart.vars;
        let center = Ideal::new(vars, root.center.clone().expect("root has a center"));
        assert!(ideal_eq(&center, &Ideal::new(vars, vec![parse(vars, "x + y")])));

        // a smooth hypersurface needs no blowups at all
        let smooth = resolve_job("vars: x y\nJ: x\nmode: scheme\n", 64, false);
        assert_resolved_and_verified(&smooth);
        assert_eq!(smooth.report.steps, 0);
        assert_eq!(smooth.nodes.len(), 1);
    });
}

#[test]
fn combinatorial_shortcut() {
    criterion("combinatorial shortcut", || {
        let entries =
            [DEntry { label: 1, mult: 2 }, DEntry { label: 2, mult: 3 }];
        let shortcut = maximal_tight_shortcut(&entries, 4).unwrap();
        assert_eq!(
            shortcut,
            Shortcut { ord: 5, lab: 0b110, members: vec![1, 2] }
        );

        let job = "vars: x y\nJ: x^2*y^3\ncontrol: 4\nD: 2 1:x 2\nD: 2 2:y 3\n";
        let run = resolve_job(job, 64, false);
        assert_resolved_and_verified(&run);

        let root = &run.nodes[&Vec::new()];
        let top = root.invariant.as_ref().expect("root was processed").0[0];
        assert_eq!(top, Tag { o: 0, k: 0, m_ord: 5, m_lab: 0b110 });

        let mut children_processed = 0usize;
        for node in run.nodes.values() {
            if node.chart.parent.as_deref() != Some(&[]) {
                continue;
            }
            if let Some(inv) = &node.invariant {
                let child_top = inv.0[0];
                assert!(
                    (child_top.m_ord, child_top.m_lab) < (top.m_ord, top.m_lab),
                    "combinatorial tag failed to drop: {child_top:?}"
                );
                children_processed += 1;
            }
        }
        assert!(children_processed > 0, "no child chart was processed");
    });
}

fn controlled_transform(
    gens: &[Polynomial],
    map: &SubstitutionMap,
    exceptional: &Polynomial,
    control: u64,
) -> Ideal {
    let moved: Vec<Polynomial> = gens
        .iter()
        .map(|g| {
            let mut g = map.apply(g);
            for _ in 0..control {
                g = g.exact_divide(exceptional).expect("controlled transform divides");
            }
            g
        })
        .collect();
    Ideal::new(map.target(), moved)
}

#[test]
fn coefficient_ideal_commutation() {
    criterion("coefficient ideal commutation", || {
        // plane cusp, first blowup, chart x -> x, y -> x*y
        let r2 = Vars::new(["x", "y"]).unwrap();
        let k = parse(&r2, "y^2 - x^3");
        let coeff = coefficient_ideal(&[k.clone()], 2, 1).unwrap();
        let line = coeff.vars().clone();
        // the chart map restricted to the flag line is the identity, so the
        // transform only divides by the exceptional power
        let lhs = controlled_transform(
            coeff.gens(),
            &SubstitutionMap::identity(&line),
            &Polynomial::var(&line, 0),
            2,
        );
        let phi = SubstitutionMap::new(
            r2.clone(),
            r2.clone(),
            vec![parse(&r2, "x"), parse(&r2, "x*y")],
        )
        .unwrap();
        let weak = phi
            .apply(&k)
            .exact_divide(&parse(&r2, "x^2"))
            .expect("weak transform divides");
        let rhs = coefficient_ideal(&[weak], 2, 1).unwrap();
        assert!(ideal_eq(&lhs, &rhs), "cusp: {:?} != {:?}", lhs.gens(), rhs.gens());

        // umbrella, first blowup, chart x -> x*y, y -> y, z -> z*y; the
        // composed order at the new origin stays 2 there
        let r3 = Vars::new(["x", "y", "z"]).unwrap();
        let k = parse(&r3, "x^2 - y^2*z");
        let coeff = coefficient_ideal(&[k.clone()], 2, 0).unwrap();
        let plane = coeff.vars().clone();
        let phi = SubstitutionMap::new(
            r3.clone(),
            r3.clone(),
            vec![parse(&r3, "x*y"), parse(&r3, "y"), parse(&r3, "z*y")],
        )
        .unwrap();
        let weak = phi
            .apply(&k)
            .exact_divide(&parse(&r3, "y^2"))
            .expect("weak transform divides");
        assert_eq!(weak.order_at_origin(), Some(2), "order must be preserved");
        let psi = SubstitutionMap::new(
            plane.clone(),
            plane.clone(),
            vec![parse(&plane, "y"), parse(&plane, "z*y")],
        )
        .unwrap();
        let lhs = controlled_transform(coeff.gens(), &psi, &parse(&plane, "y"), 2);
        let rhs = coefficient_ideal(&[weak], 2, 0).unwrap();
        assert!(ideal_eq(&lhs, &rhs), "umbrella: {:?} != {:?}", lhs.gens(), rhs.gens());
    });
}

#[test]
fn flag_independence() {
    criterion("flag independence", || {
        for (job, budget) in [(CUSP, 64), (UMBRELLA, 512)] {
            let run = resolve_job(job, budget, false);
            assert_resolved_and_verified(&run);
            let mut recomputed = 0usize;
            for node in run.nodes.values() {
                let (Some(invariant), Some(point)) = (&node.invariant, &node.point) else {
                    continue;
                };
                let comps = node.chart.comps_map();
                let inp = SetupInput {
                    vars: &node.chart.vars,
                    j: &node.chart.mobile.j,
                    c: node.chart.mobile.c,
                    handicaps: &node.chart.mobile.handicaps,
                    comps: &comps,
                    alt_picks: true,
                };
                let setup = build_setup(&inp, point).expect("alternative descent succeeds");
                assert_eq!(
                    setup.invariant,
                    *invariant,
                    "alternative osculating picks changed the invariant in chart {}",
                    node.chart.id_string()
                );
                recomputed += 1;
            }
            assert!(recomputed > 0, "no chart was recomputed");
        }
    });
}

fn random_poly(rng: &mut ChaCha8Rng, vars: &Vars, max_exp: u32, terms: usize) -> Polynomial {
    loop {
        let p = Polynomial::from_terms(
            vars,
            (0..terms).map(|_| {
                let exps: Vec<u32> =
                    (0..vars.len()).map(|_| rng.gen_range(0..=max_exp)).collect();
                let mut c = 0i64;
                while c == 0 {
                    c = rng.gen_range(-5..=5);
                }
                (Monomial::from_exps(exps), rat_int(c))
            }),
        );
        if !p.is_zero() {
            return p;
        }
    }
}

#[test]
fn kernel_properties() {
    criterion("kernel properties", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r3 = Vars::new(["x", "y", "z"]).unwrap();
        let r2 = Vars::new(["x", "y"]).unwrap();

        // order is additive under products and submultiplicative under sums
        for _ in 0..120 {
            let f = random_poly(&mut rng, &r3, 3, 4);
            let g = random_poly(&mut rng, &r3, 3, 4);
            let of = f.order_at_origin().unwrap();
            let og = g.order_at_origin().unwrap();
            assert_eq!((&f * &g).order_at_origin(), Some(of + og));
            let sum = &f + &g;
            if let Some(os) = sum.order_at_origin() {
                assert!(os >= of.min(og));
                if of != og {
                    assert_eq!(os, of.min(og));
                }
            }
        }

        // the derivative ideal depends only on the ideal, not the generators
        for _ in 0..20 {
            let f1 = random_poly(&mut rng, &r2, 3, 3);
            let f2 = random_poly(&mut rng, &r2, 3, 3);
            let base = Ideal::new(&r2, vec![f1.clone(), f2.clone()]);
            let a = random_poly(&mut rng, &r2, 2, 2);
            let b = random_poly(&mut rng, &r2, 2, 2);
            let mixed = &(&a * &f1) + &(&b * &f2);
            let padded = Ideal::new(&r2, vec![f1, f2, mixed]);
            assert!(
                ideal_eq(&base.delta(), &padded.delta()),
                "derivative ideal changed with the presentation"
            );
        }

        // iterated derivative ideals cut out exactly the high-order loci
        for _ in 0..20 {
            let f = random_poly(&mut rng, &r2, 4, 3);
            if f.is_constant() {
                continue;
            }
            let point: Vec<BigRational> =
                (0..2).map(|_| rat_int(rng.gen_range(-2..=2))).collect();
            let ord = f.order_at_point(&point).unwrap();
            let mut stage = Ideal::new(&r2, vec![f.clone()]);
            for j in 0..=ord {
                let vanishes = stage.gens().iter().all(|g| g.eval(&point) == rat_int(0));
                assert_eq!(
                    vanishes,
                    ord > j,
                    "derivative stage {j} disagrees with pointwise order {ord}"
                );
                stage = stage.delta();
            }
        }

        assert!(
            start.elapsed() < Duration::from_secs(120),
            "property suite too slow"
        );
    });
}

fn swap_name(name: &str) -> &str {
    match name {
        "x" => "y",
        "y" => "x",
        other => other,
    }
}

/// Map a polynomial into `target` by sending each variable to its
/// swapped-name counterpart.
fn renamed_into(p: &Polynomial, target: &Vars) -> Polynomial {
    let src = p.vars().clone();
    let images: Vec<Polynomial> = (0..src.len())
        .map(|i| {
            let to = swap_name(src.name(i));
            let slot = target
                .index_of(to)
                .unwrap_or_else(|| panic!("no variable {to} in the mirror chart"));
            Polynomial::var(target, slot)
        })
        .collect();
    SubstitutionMap::new(src, target.clone(), images).unwrap().apply(p)
}

#[test]
fn equivariance_under_variable_swap() {
    criterion("equivariance under variable swap", || {
        let a = resolve_job("vars: x y\nJ: y^2 - x^3\nmode: scheme\n", 64, false);
        let b = resolve_job("vars: x y\nJ: x^2 - y^3\nmode: scheme\n", 64, false);
        assert_resolved_and_verified(&a);
        assert_resolved_and_verified(&b);
        assert_eq!(a.report.rounds, b.report.rounds);
        assert_eq!(
            a.nodes.keys().collect::<Vec<_>>(),
            b.nodes.keys().collect::<Vec<_>>(),
            "tree shapes differ"
        );

        for (id, na) in &a.nodes {
            let nb = &b.nodes[id];
            assert_eq!(na.resolved, nb.resolved);
            assert_eq!(na.step, nb.step);
            assert_eq!(na.invariant, nb.invariant);
            assert_eq!(na.children, nb.children);

            let av = &na.chart.vars;
            let mut a_names: Vec<&str> = av.names().iter().map(|s| s.as_str()).collect();
            let mut b_names: Vec<&str> =
                nb.chart.vars.names().iter().map(|s| swap_name(s)).collect();
            a_names.sort_unstable();
            b_names.sort_unstable();
            assert_eq!(a_names, b_names, "variable sets differ at {id:?}");

            assert_eq!(na.chart.mobile.c, nb.chart.mobile.c);
            assert_eq!(na.chart.mobile.j.len(), nb.chart.mobile.j.len());
            for (ga, gb) in na.chart.mobile.j.iter().zip(&nb.chart.mobile.j) {
                assert_eq!(*ga, renamed_into(gb, av), "ideal differs at {id:?}");
            }

            assert_eq!(na.chart.exceptional.len(), nb.chart.exceptional.len());
            for (ca, cb) in na.chart.exceptional.iter().zip(&nb.chart.exceptional) {
                assert_eq!(ca.label, cb.label);
                assert_eq!(ca.birth_step, cb.birth_step);
                assert_eq!(ca.equation, renamed_into(&cb.equation, av));
            }

            match (&na.center, &nb.center) {
                (None, None) => {}
                (Some(ca), Some(cb)) => {
                    assert_eq!(ca.len(), cb.len());
                    for (pa, pb) in ca.iter().zip(cb) {
                        assert_eq!(*pa, renamed_into(pb, av), "center differs at {id:?}");
                    }
                }
                _ => panic!("center presence differs at {id:?}"),
            }

            match (&na.chart.mobile.handicaps, &nb.chart.mobile.handicaps) {
                (
                    HandicapState::Literal { d: da, e: ea },
                    HandicapState::Literal { d: db, e: eb },
                ) => {
                    assert_eq!(da, db);
                    assert_eq!(ea, eb);
                }
                (
                    HandicapState::Transported {
                        d_inside: da,
                        e_inside: ea,
                        e_full: fa,
                        ref_levels: ra,
                    },
                    HandicapState::Transported {
                        d_inside: db,
                        e_inside: eb,
                        e_full: fb,
                        ref_levels: rb,
                    },
                ) => {
                    assert_eq!(da, db);
                    assert_eq!(ea, eb);
                    assert_eq!(fa, fb);
                    assert_eq!(ra.len(), rb.len());
                    for (la, lb) in ra.iter().zip(rb) {
                        assert_eq!(la.tag, lb.tag);
                        assert_eq!(la.o, lb.o);
                        assert_eq!(la.c_next, lb.c_next);
                        match (&la.flag, &lb.flag) {
                            (None, None) => {}
                            (Some(pa), Some(pb)) => {
                                assert_eq!(*pa, renamed_into(pb, av))
                            }
                            _ => panic!("flag presence differs at {id:?}"),
                        }
                    }
                }
                _ => panic!("handicap kinds differ at {id:?}"),
            }

            match (&na.chart.edge_from_parent, &nb.chart.edge_from_parent) {
                (None, None) => {}
                (Some(ea), Some(eb)) => {
                    let pa = ea.source();
                    let pb = eb.source();
                    for i in 0..pb.len() {
                        let j = pa
                            .index_of(swap_name(pb.name(i)))
                            .expect("parent variable matches");
                        assert_eq!(
                            ea.images()[j],
                            renamed_into(&eb.images()[i], av),
                            "blowup map differs at {id:?}"
                        );
                    }
                }
                _ => panic!("edge presence differs at {id:?}"),
            }
        }
    });
}

#[test]
fn deterministic_artifacts() {
    criterion("deterministic artifacts", || {
        let corpus: [(&str, String, &[&str]); 5] = [
            ("cusp", CUSP.to_string(), &[]),
            ("umbrella", UMBRELLA.to_string(), &["--max-steps", "512"]),
            ("a3", "vars: x y\nJ: y^2 - x^4\nmode: scheme\n".to_string(), &[]),
            ("bold", "vars: x y\nJ: (x + y)^2\ncontrol: 2\n".to_string(), &[]),
            (
                "monomial",
                "vars: x y\nJ: x^2*y^3\ncontrol: 4\nD: 2 1:x 2\nD: 2 2:y 3\n".to_string(),
                &[],
            ),
        ];
        let dir = tempfile::tempdir().unwrap();
        for (name, job, extra) in &corpus {
            let input = dir.path().join(format!("{name}.job"));
            std::fs::write(&input, job).unwrap();
            let mut artifacts: Vec<(Vec<u8>, Vec<u8>)> = Vec::new();
            for round in 0..2 {
                let out = dir.path().join(format!("{name}-{round}"));
                let status = Command::new(env!("CARGO_BIN_EXE_resolve"))
                    .arg("--input")
                    .arg(&input)
                    .arg("--out")
                    .arg(&out)
                    .args(*extra)
                    .env_remove("RESOLVE_MAX_STEPS")
                    .status()
                    .unwrap();
                assert!(status.success(), "{name} run {round} failed");
                artifacts.push((
                    std::fs::read(out.join("tree.json")).unwrap(),
                    std::fs::read(out.join("report.json")).unwrap(),
                ));
            }
            assert_eq!(artifacts[0].0, artifacts[1].0, "{name}: tree.json differs");
            assert_eq!(artifacts[0].1, artifacts[1].1, "{name}: report.json differs");
        }
    });
}
