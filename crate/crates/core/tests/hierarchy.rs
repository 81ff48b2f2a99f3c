use curlhom::cell::layered::LayeredMedium;
use curlhom::cell::{tf_curl, tf_div, tf_rms, tf_sym_middle, CellHierarchy, CellMedium};
use curlhom::laminate::{assemble_hierarchy, LaminateProfile};
use curlhom::tensor::{symmetrize, third_order_curl_annihilator, ConstTensor};

fn two_layer() -> LaminateProfile {
    LaminateProfile::two_layer(1.0, 2.0, 0.5).unwrap()
}

fn sym_mid(t: &ConstTensor) -> ConstTensor {
    let r = t.order();
    if r < 4 {
        return t.clone();
    }
    let perms = curlhom::tensor::permutations(r - 2);
    ConstTensor::from_fn(r, |idx| {
        let mut s = idx.to_vec();
        let mut acc = 0.0;
        for p in &perms {
            for (slot, &k) in p.iter().enumerate() {
                s[1 + slot] = idx[1 + k];
            }
            acc += t.at(&s);
        }
        acc / perms.len() as f64
    })
    .unwrap()
}

#[test]
fn generic_recurrence_matches_closed_form_tables() {
    let p = two_layer();
    let gen = CellHierarchy::build(LayeredMedium::new(&p), 4).unwrap();
    let tab = assemble_hierarchy(&p, 4).unwrap();
    for r in 2..=5 {
        let a = gen.hat_h(r).unwrap();
        let b = tab.hat_h(r).unwrap();
        let d = sym_mid(a).max_abs_diff(&sym_mid(b));
        assert!(d < 1e-13, "hat h^({r}) differs by {d}");
    }
    // correctors agree after symmetrising derivative indices
    let med = LayeredMedium::new(&p);
    for j in 1..=4 {
        let g = tf_sym_middle(&med, &gen.level(j).unwrap().n);
        let t = tab.corrector_symmetrised(j).unwrap();
        let diff = curlhom::cell::tf_add(&med, 1.0, &g, -1.0, &t);
        assert!(tf_rms(&med, &diff) < 1e-13, "N^({j})");
    }
}

#[test]
fn correctors_are_divergence_free_and_zero_mean() {
    let med = LayeredMedium::new(&LaminateProfile::from_widths(&[1.0, 3.0, 2.0], &[0.2, 0.5, 0.3]).unwrap());
    let h = CellHierarchy::build(med, 3).unwrap();
    for j in 1..=3 {
        let n = &h.level(j).unwrap().n;
        assert!(tf_rms(&h.medium, &tf_div(&h.medium, n)) < 1e-12);
        for c in &n.comps {
            assert!(h.medium.mean(c).abs() < 1e-14);
        }
        let _ = tf_curl(&h.medium, n);
    }
}

#[test]
fn asymmetric_three_layer_has_third_order_tensor() {
    let p = LaminateProfile::from_widths(&[1.0, 3.0, 2.0], &[0.2, 0.5, 0.3]).unwrap();
    let h = CellHierarchy::build(LayeredMedium::new(&p), 2).unwrap();
    let h3 = h.hat_h(3).unwrap();
    assert!(h3.max_abs() > 1e-4);
    let rep = third_order_curl_annihilator(h3).unwrap();
    assert!(rep.annihilates, "{rep:?}");
}

#[test]
fn symmetrisation_identity_on_laminates() {
    for p in [two_layer(), LaminateProfile::from_widths(&[1.0, 3.0, 2.0], &[0.2, 0.5, 0.3]).unwrap()] {
        let h = CellHierarchy::build(LayeredMedium::new(&p), 5).unwrap();
        for n in 0..=3 {
            let rep = h.verify_equivalence(n).unwrap();
            assert!(rep.relative_deviation < 1e-10, "n = {n}: {rep:?}");
        }
        let rep = h.verify_equivalence(1).unwrap();
        assert!(rep.max_deviation < 1e-14);
        let _ = symmetrize(h.hat_h(2).unwrap());
    }
}

#[test]
fn k_correctors_solve_their_poisson_problems() {
    let p = two_layer();
    let mut h = CellHierarchy::build(LayeredMedium::new(&p), 3).unwrap();
    h.solve_k(3).unwrap();
    assert!(tf_rms(&h.medium, h.k(1).unwrap()) == 0.0);
    assert!(tf_rms(&h.medium, h.k(2).unwrap()) > 1e-3);
}
