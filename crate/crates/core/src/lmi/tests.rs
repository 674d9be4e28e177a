use super::*;
use crate::evaluation::dlyap;
use nalgebra::dmatrix;

fn opts() -> SolveOptions<f64> {
    SolveOptions::default()
}

#[test]
fn symmetric_indices_are_contiguous() {
    let mut p = SdpProblem::<f64>::new();
    let _a = p.register_rectangular_variable("A", 2, 3).unwrap();
    let y = p.register_symmetric_variable("Y", 4).unwrap();
    let mut seen: Vec<usize> = (0..4).flat_map(|c| (c..4).map(move |r| (r, c))).map(|(r, c)| y.index(r, c)).collect();
    seen.sort();
    assert_eq!(seen, (6..16).collect::<Vec<_>>());
    assert_eq!(y.index(1, 3), y.index(3, 1));
    assert_eq!(p.n_vars(), 16);
}

#[test]
fn pack_extract_roundtrip() {
    let mut p = SdpProblem::<f64>::new();
    let k = p.register_rectangular_variable("K", 2, 3).unwrap();
    let y = p.register_symmetric_variable("Y", 3).unwrap();
    let km = dmatrix![1.0, 2.0, 3.0; 4.0, 5.0, 6.0];
    let ym = dmatrix![1.0, 0.5, 0.2; 0.5, 2.0, 0.1; 0.2, 0.1, 3.0];
    let mut x = DVector::zeros(p.n_vars());
    k.pack(&km, &mut x);
    y.pack(&ym, &mut x);
    assert_eq!(k.extract(&x), km);
    assert_eq!(y.extract(&x), ym);
}

#[test]
fn duplicate_and_foreign_variables_are_rejected() {
    let mut p = SdpProblem::<f64>::new();
    p.register_symmetric_variable("P", 2).unwrap();
    assert!(matches!(p.register_symmetric_variable("P", 2), Err(Error::DuplicateVariable(_))));

    let mut other = SdpProblem::<f64>::new();
    other.register_symmetric_variable("P", 2).unwrap();
    let foreign = other.register_symmetric_variable("Q", 2).unwrap();
    let mut blk = AffineBlock::new(2);
    blk.var(0, 0, foreign);
    assert!(matches!(p.add_psd_block(blk), Err(Error::UnknownVariable(_))));
}

#[test]
fn block_evaluation_matches_affine_expression() {
    let mut p = SdpProblem::<f64>::new();
    let k = p.register_rectangular_variable("K", 1, 2).unwrap();
    let x = p.register_symmetric_variable("X", 2).unwrap();
    let a = dmatrix![1.0, 0.5; 0.0, 0.9];
    let b = dmatrix![0.0; 1.0];
    let mut blk = AffineBlock::new(4);
    blk.var(0, 0, x);
    blk.constant(2, 0, &a);
    blk.term(2, 0, &b, k, &DMatrix::identity(2, 2));
    blk.constant(2, 2, &DMatrix::identity(2, 2));
    p.add_psd_block(blk).unwrap();

    let km = dmatrix![-0.2, -0.4];
    let xm = dmatrix![2.0, 0.3; 0.3, 1.5];
    let mut v = DVector::zeros(p.n_vars());
    k.pack(&km, &mut v);
    x.pack(&xm, &mut v);
    let acl = &a + &b * &km;
    let mut expected = DMatrix::zeros(4, 4);
    expected.view_mut((0, 0), (2, 2)).copy_from(&xm);
    expected.view_mut((2, 0), (2, 2)).copy_from(&acl);
    expected.view_mut((0, 2), (2, 2)).copy_from(&acl.transpose());
    expected.view_mut((2, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
    assert!((p.blocks()[0].evaluate(&v) - expected).abs().max() < 1e-14);
}

#[test]
fn scalar_schur_bound() {
    // [x 1; 1 1] ⪰ 0  ⇔  x ≥ 1
    let mut p = SdpProblem::<f64>::new();
    let x = p.register_symmetric_variable("x", 1).unwrap();
    p.add_trace_objective(x, &dmatrix![1.0], 1.0).unwrap();
    let mut blk = AffineBlock::new(2);
    blk.var(0, 0, x);
    blk.constant(1, 0, &dmatrix![1.0]);
    blk.constant(1, 1, &dmatrix![1.0]);
    p.add_psd_block(blk).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective_value - 1.0).abs() < 1e-6, "{}", sol.objective_value);
    assert!(verify(&p, &sol, &opts()).ok);
}

#[test]
fn largest_eigenvalue() {
    let a = dmatrix![2.0, 1.0, 0.0; 1.0, 3.0, 0.5; 0.0, 0.5, -1.0];
    let mut p = SdpProblem::<f64>::new();
    let t = p.register_symmetric_variable("t", 1).unwrap();
    p.add_trace_objective(t, &dmatrix![1.0], 1.0).unwrap();
    let mut blk = AffineBlock::new(3);
    for i in 0..3 {
        let mut e = DMatrix::zeros(3, 1);
        e[(i, 0)] = 1.0;
        blk.term(0, 0, &e, t, &e.transpose());
    }
    blk.constant(0, 0, &(-&a));
    p.add_psd_block(blk).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let lmax = crate::linalg::max_eigenvalue(&a);
    assert!((sol.objective_value - lmax).abs() < 1e-6);
}

#[test]
fn lyapunov_trace_minimization() {
    // min tr P  s.t.  P − AᵀPA − I ⪰ 0 is attained at the Lyapunov solution.
    let a = dmatrix![0.5, 0.4, 0.0; -0.3, 0.6, 0.2; 0.1, 0.0, 0.7];
    let mut p = SdpProblem::<f64>::new();
    let pv = p.register_symmetric_variable("P", 3).unwrap();
    p.add_trace_objective(pv, &DMatrix::identity(3, 3), 1.0).unwrap();
    let mut blk = AffineBlock::new(3);
    blk.var(0, 0, pv);
    blk.term(0, 0, &(-a.transpose()), pv, &a);
    blk.constant(0, 0, &(-DMatrix::identity(3, 3)));
    p.add_psd_block(blk).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    let expected = dlyap(&a, &DMatrix::identity(3, 3)).unwrap();
    let got = pv.extract(&sol.x);
    assert!((got - &expected).abs().max() < 1e-5 * (1.0 + expected.abs().max()));
}

#[test]
fn infeasible_problem_is_detected() {
    let mut p = SdpProblem::<f64>::new();
    let x = p.register_symmetric_variable("x", 1).unwrap();
    p.add_trace_objective(x, &dmatrix![1.0], 1.0).unwrap();
    let mut b1 = AffineBlock::new(1);
    b1.var(0, 0, x);
    p.add_psd_block(b1).unwrap();
    let mut b2 = AffineBlock::new(1);
    b2.term(0, 0, &dmatrix![-1.0], x, &dmatrix![1.0]);
    b2.constant(0, 0, &dmatrix![-1.0]);
    p.add_psd_block(b2).unwrap();
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, SdpStatus::Infeasible);
}

/// `min Σ yᵢ + t` with `yᵢ t ≥ aᵢ²`; optimum `2‖a‖` at `t = ‖a‖`.
fn arrow_problem(m: usize) -> (SdpProblem<f64>, f64) {
    let mut p = SdpProblem::<f64>::new();
    let t = p.register_symmetric_variable("t", 1).unwrap();
    p.add_trace_objective(t, &dmatrix![1.0], 1.0).unwrap();
    let mut norm2 = 0.0;
    for i in 0..m {
        let a = 0.5 + (i as f64 * 0.37).sin();
        norm2 += a * a;
        let y = p.register_symmetric_variable(&format!("y{i}"), 1).unwrap();
        p.add_trace_objective(y, &dmatrix![1.0], 1.0).unwrap();
        let mut blk = AffineBlock::new(2);
        blk.var(0, 0, y);
        blk.constant(1, 0, &dmatrix![a]);
        blk.var(1, 1, t);
        p.add_psd_block(blk).unwrap();
    }
    (p, 2.0 * norm2.sqrt())
}

#[test]
fn shared_variable_elimination_matches_closed_form() {
    for m in [20, 150] {
        let (p, expected) = arrow_problem(m);
        let sol = solve(&p, &opts()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal, "m = {m}");
        assert!((sol.objective_value - expected).abs() < 1e-6 * expected, "m = {m}");
        assert!(verify(&p, &sol, &opts()).ok);
    }
}

#[test]
fn sparse_text_dump() {
    let (p, _) = arrow_problem(2);
    let mut buf = Vec::new();
    p.write_sparse_text(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "3 2");
    assert_eq!(lines[1], "2 2");
    // Constant off-diagonal entry, the y₀ diagonal and the shared t entry.
    assert!(lines.iter().any(|l| l.starts_with("1 0 1 2 ")));
    assert!(lines.iter().any(|l| l.starts_with("1 2 1 1 ")));
    assert!(lines.iter().any(|l| l.starts_with("2 1 2 2 ")));
}
