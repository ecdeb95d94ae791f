//! Evaluation metrics: fitting, MMD/coverage, parallelogram consistency,
//! two-way consistency, transfer against parametric ground truth, and
//! structure discovery on tables.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_shape, Family, ProcShape};
use crate::geometry::{chamfer, PointCloud};
use crate::handles::{EditOperators, EditRequest, HandleKind, HandleSpace, ProjectorForm, ResidualProjector};
use crate::nets::{Model, Variant};
use crate::rng::stream;
use crate::{Error, Result};

/// Aggregate metrics of one evaluation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fitting_cd: f64,
    pub mmd_cd: f64,
    pub cov_cd: f64,
    pub parallelogram_cd: f64,
    pub two_way: f64,
    /// Tables only: leg x, y, z size spread and top–leg gap, projected.
    pub symmetry_ratios: Option<[f64; 4]>,
}

/// Sample counts for [`evaluate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub fitting_pairs: usize,
    pub parallelogram_triples: usize,
    pub two_way_candidates: usize,
    pub two_way_keep: usize,
    pub mmd_targets: usize,
    pub mmd_pairs: usize,
    pub symmetry_trials: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            fitting_pairs: 200,
            parallelogram_triples: 100,
            two_way_candidates: 200,
            two_way_keep: 20,
            mmd_targets: 10,
            mmd_pairs: 200,
            symmetry_trials: 500,
            seed: 0,
        }
    }
}

/// Mean `Ch(d(x→y), y)` over index pairs into `clouds`.
pub fn eval_fitting(model: &Model, clouds: &[PointCloud], pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("no pairs to evaluate"));
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        total += chamfer(&model.deform(&clouds[i], &clouds[j])?, &clouds[j]).value;
    }
    Ok(total / pairs.len() as f64)
}

/// Minimal matching distance and coverage of `generated` against
/// `reference`; nearest-reference ties resolve to the lowest index.
pub fn eval_mmd_cov(generated: &[PointCloud], reference: &[PointCloud]) -> Result<(f64, f64)> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::input("mmd/cov needs nonempty sets"));
    }
    let mut covered = alloc::vec![false; reference.len()];
    let mut mmd = 0.0;
    for g in generated {
        let mut best = f64::INFINITY;
        let mut best_r = 0;
        for (r, rc) in reference.iter().enumerate() {
            let d = chamfer(g, rc).value;
            if d < best {
                best = d;
                best_r = r;
            }
        }
        mmd += best;
        covered[best_r] = true;
    }
    let cov = covered.iter().filter(|c| **c).count() as f64 / reference.len() as f64;
    Ok((mmd / generated.len() as f64, cov))
}

/// Transfers each `(src, new_src)` deformation onto each target and scores
/// the pooled outputs per target against `reference`; returns the means
/// over targets.
pub fn eval_transfer_mmd_cov(
    model: &Model,
    clouds: &[PointCloud],
    targets: &[usize],
    pairs: &[(usize, usize)],
    reference: &[PointCloud],
) -> Result<(f64, f64)> {
    if targets.is_empty() || pairs.is_empty() {
        return Err(Error::input("mmd/cov needs targets and pairs"));
    }
    let deltas = pairs
        .iter()
        .map(|&(a, b)| model.latent_delta(&clouds[a], &clouds[b]))
        .collect::<Result<Vec<_>>>()?;
    let (mut mmd, mut cov) = (0.0, 0.0);
    for &t in targets {
        let outputs = deltas.iter().map(|v| model.deform_by(&clouds[t], v)).collect::<Result<Vec<_>>>()?;
        let (m, c) = eval_mmd_cov(&outputs, reference)?;
        mmd += m;
        cov += c;
    }
    let count = targets.len() as f64;
    Ok((mmd / count, cov / count))
}

/// `Ch(z ⊕ →xy, y ⊕ →xz)`, each side deformed with its own dictionary.
pub fn parallelogram_gap(model: &Model, x: &PointCloud, y: &PointCloud, z: &PointCloud) -> Result<f64> {
    let a = model.deform_by(z, &model.latent_delta(x, y)?)?;
    let b = model.deform_by(y, &model.latent_delta(x, z)?)?;
    Ok(chamfer(&a, &b).value)
}

pub fn eval_parallelogram(model: &Model, clouds: &[PointCloud], triples: &[(usize, usize, usize)]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::input("no triples to evaluate"));
    }
    let mut total = 0.0;
    for &(x, y, z) in triples {
        total += parallelogram_gap(model, &clouds[x], &clouds[y], &clouds[z])?;
    }
    Ok(total / triples.len() as f64)
}

/// `(1/n) Σ_i ‖(d_i(x→y) − x_i) + (d_i(y→x) − y_i)‖²` for index-aligned
/// clouds.
pub fn two_way_error(model: &Model, x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("two-way clouds", x.len(), y.len()));
    }
    let xy = model.deform(x, y)?;
    let yx = model.deform(y, x)?;
    let mut total = 0.0;
    for i in 0..x.len() {
        let (p, q) = (x.points()[i], y.points()[i]);
        let (dp, dq) = (xy.points()[i], yx.points()[i]);
        total += (0..3).map(|c| (dp[c] - p[c] + dq[c] - q[c]).powi(2)).sum::<f64>();
    }
    Ok(total / x.len() as f64)
}

pub fn eval_two_way(model: &Model, clouds: &[PointCloud], pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::input("no pairs to evaluate"));
    }
    let mut total = 0.0;
    for &(i, j) in pairs {
        total += two_way_error(model, &clouds[i], &clouds[j])?;
    }
    Ok(total / pairs.len() as f64)
}

/// Random ordered pairs of distinct entries of `ids`.
pub fn sample_pairs(ids: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if ids.len() < 2 {
        return Err(Error::input("need at least two shapes to pair"));
    }
    let mut rng = stream(seed, 0x7061697273);
    Ok((0..count)
        .map(|_| {
            let i = rng.gen_range(0..ids.len());
            let j = (i + rng.gen_range(1..ids.len())) % ids.len();
            (ids[i], ids[j])
        })
        .collect())
}

/// Random triples of pairwise distinct entries of `ids`.
pub fn sample_triples(ids: &[usize], count: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    if ids.len() < 3 {
        return Err(Error::input("need at least three shapes for triples"));
    }
    let mut rng = stream(seed, 0x747269706c6573);
    Ok((0..count)
        .map(|_| {
            let picked: Vec<usize> = ids.choose_multiple(&mut rng, 3).copied().collect();
            (picked[0], picked[1], picked[2])
        })
        .collect())
}

/// The `keep` pairs with the largest `Ch(x, y)` among `candidates` random
/// pairs; ties keep sampling order.
pub fn worst_pairs(clouds: &[PointCloud], ids: &[usize], candidates: usize, keep: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let pairs = sample_pairs(ids, candidates, seed)?;
    let mut scored: Vec<(f64, usize)> = pairs.iter().enumerate().map(|(k, &(i, j))| (chamfer(&clouds[i], &clouds[j]).value, k)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(keep).map(|(_, k)| pairs[k]).collect())
}

/// Transfer against the parametric ground truth: for each `(src, tgt, dst)`
/// triple, the shape generated from `dst + (tgt − src)` in parameter space
/// is compared with the transferred `dst`. Returns the mean transfer CD and
/// the mean CD of the untouched `dst` to the same ground truth.
pub fn eval_transfer_ground_truth(
    model: &Model,
    shapes: &[ProcShape],
    triples: &[(usize, usize, usize)],
    sampling_seed: u64,
) -> Result<(f64, f64)> {
    if triples.is_empty() {
        return Err(Error::input("no triples to evaluate"));
    }
    let (mut transferred, mut baseline) = (0.0, 0.0);
    for &(s, t, d) in triples {
        let (src, tgt, dst) = (&shapes[s], &shapes[t], &shapes[d]);
        let params = dst.params.transferred(&src.params, &tgt.params);
        let truth = gen_shape(&params, dst.cloud.len(), sampling_seed)?;
        let out = model.transfer(&src.cloud, &tgt.cloud, &dst.cloud)?;
        transferred += chamfer(&out, &truth.cloud).value;
        baseline += chamfer(&dst.cloud, &truth.cloud).value;
    }
    let count = triples.len() as f64;
    Ok((transferred / count, baseline / count))
}

/// Structure-discovery ratios with and without projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub projected: [f64; 4],
    pub unprojected: [f64; 4],
}

/// Leg size spread along x, y, z and the mean top–leg gap of a table's
/// handle parameters, divided by the default shape's extent along each axis
/// (the gap by the height).
pub fn table_structure_ratios(hs: &HandleSpace, base: &ProcShape, z: &[f64]) -> [f64; 4] {
    let value = |part: usize, kind: HandleKind, axis: usize| {
        let idx = 6 * part + if kind == HandleKind::Scale { 3 } else { 0 } + axis;
        debug_assert_eq!(hs.handles[idx].part, part);
        z[idx]
    };
    let size = |part: usize, axis: usize| 2.0 * base.parts[part].extents[axis] * value(part, HandleKind::Scale, axis);
    let (lo, hi) = base.cloud.bounds();
    let mut out = [0.0; 4];
    for (axis, slot) in out.iter_mut().take(3).enumerate() {
        let sizes: Vec<f64> = (1..5).map(|p| size(p, axis)).collect();
        let spread = sizes.iter().copied().fold(f64::NEG_INFINITY, f64::max) - sizes.iter().copied().fold(f64::INFINITY, f64::min);
        *slot = spread / (hi[axis] - lo[axis]);
    }
    let underside = value(0, HandleKind::Translation, 2) - 0.5 * size(0, 2);
    let gap: f64 = (1..5)
        .map(|p| (underside - (value(p, HandleKind::Translation, 2) + 0.5 * size(p, 2))).abs())
        .sum::<f64>()
        / 4.0;
    out[3] = gap / (hi[2] - lo[2]);
    out
}

/// Perturbs one random handle of the default table per trial (translations
/// by up to ±0.5, scales to [0.5, 1.5] of the default), projects it onto the
/// model's deformation space, and averages [`table_structure_ratios`].
pub fn eval_symmetry_discovery(model: &Model, base: &ProcShape, trials: usize, seed: u64) -> Result<SymmetryReport> {
    eval_symmetry_discovery_scaled(model, base, trials, seed, 1.0)
}

/// [`eval_symmetry_discovery`] with the perturbation ranges multiplied by
/// `magnitude`.
pub fn eval_symmetry_discovery_scaled(model: &Model, base: &ProcShape, trials: usize, seed: u64, magnitude: f64) -> Result<SymmetryReport> {
    if base.family() != Family::Table {
        return Err(Error::Usage("structure discovery is defined for tables"));
    }
    if trials == 0 {
        return Err(Error::input("no trials"));
    }
    let hs = &base.handle_space;
    let dict = model.predict_dictionary(&base.cloud)?;
    let residual = Arc::new(ResidualProjector::new(&dict, ProjectorForm::Auto)?);
    let m = hs.num_handles();
    let mut ops: Vec<Option<EditOperators>> = (0..m).map(|_| None).collect();
    let mut rng = stream(seed, 0x73796d);
    let mut report = SymmetryReport::default();
    for _ in 0..trials {
        let h = rng.gen_range(0..m);
        let z0 = hs.defaults[h];
        let value = match hs.handles[h].kind {
            HandleKind::Translation => z0 + magnitude * rng.gen_range(-0.5..=0.5),
            HandleKind::Scale => z0 * (1.0 + magnitude * rng.gen_range(-0.5..=0.5)),
        };
        let mut z_in = hs.defaults.clone().into_inner();
        z_in[h] = value;
        if ops[h].is_none() {
            ops[h] = Some(EditOperators::build(hs, residual.clone(), &[h])?);
        }
        let edit = EditRequest::new(alloc::vec![h], alloc::vec![value]);
        let projected = ops[h].as_ref().expect("built above").project(hs, &edit)?;
        let rp = table_structure_ratios(hs, base, &projected.z_hat[..]);
        let ru = table_structure_ratios(hs, base, &z_in);
        for c in 0..4 {
            report.projected[c] += rp[c] / trials as f64;
            report.unprojected[c] += ru[c] / trials as f64;
        }
    }
    Ok(report)
}

/// Full metric suite on the test split of `shapes`.
pub fn evaluate(model: &Model, shapes: &[ProcShape], test: &[usize], sampling_seed: u64, cfg: &EvalConfig) -> Result<MetricsReport> {
    let clouds: Vec<PointCloud> = shapes.iter().map(|s| s.cloud.clone()).collect();
    let fitting_pairs = sample_pairs(test, cfg.fitting_pairs, cfg.seed)?;
    let triples = sample_triples(test, cfg.parallelogram_triples, cfg.seed)?;
    let worst = worst_pairs(&clouds, test, cfg.two_way_candidates, cfg.two_way_keep, cfg.seed)?;
    let mut rng = stream(cfg.seed, 0x6d6d64);
    let targets: Vec<usize> = test.choose_multiple(&mut rng, cfg.mmd_targets.min(test.len())).copied().collect();
    let mmd_pairs = sample_pairs(test, cfg.mmd_pairs, cfg.seed ^ 1)?;
    let reference: Vec<PointCloud> = test.iter().map(|&i| clouds[i].clone()).collect();
    let (mmd_cd, cov_cd) = eval_transfer_mmd_cov(model, &clouds, &targets, &mmd_pairs, &reference)?;
    let symmetry_ratios = if shapes.first().map(|s| s.family()) == Some(Family::Table)
        && cfg.symmetry_trials > 0
        && model.variant() != Variant::Circular
    {
        let base = crate::datagen::gen_table(&crate::datagen::Params::default_for(Family::Table), model.n(), sampling_seed)?;
        Some(eval_symmetry_discovery(model, &base, cfg.symmetry_trials, cfg.seed)?.projected)
    } else {
        None
    };
    Ok(MetricsReport {
        fitting_cd: eval_fitting(model, &clouds, &fitting_pairs)?,
        mmd_cd,
        cov_cd,
        parallelogram_cd: eval_parallelogram(model, &clouds, &triples)?,
        two_way: eval_two_way(model, &clouds, &worst)?,
        symmetry_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_dataset, gen_table, Params};
    use crate::nets::{ModelConfig, Variant, Widths};
    use alloc::string::String;

    fn tiny(n: usize, k: usize, variant: Variant, seed: u64) -> Model {
        let mut cfg = ModelConfig::new(n, k, variant);
        cfg.widths = Widths::default().scaled_down(8);
        Model::new(cfg, seed).unwrap()
    }

    fn clouds(family: Family, count: usize, n: usize) -> Vec<PointCloud> {
        gen_dataset(family, count, n, 3).unwrap().shapes.into_iter().map(|s| s.cloud).collect()
    }

    #[test]
    fn fitting_of_identical_pairs_is_zero_and_single_pair_is_chamfer() {
        let m = tiny(32, 4, Variant::Standard, 1);
        let c = clouds(Family::Table, 4, 32);
        assert_eq!(eval_fitting(&m, &c, &[(0, 0), (2, 2)]).unwrap(), 0.0);
        let direct = chamfer(&m.deform(&c[0], &c[1]).unwrap(), &c[1]).value;
        assert_eq!(eval_fitting(&m, &c, &[(0, 1)]).unwrap(), direct);
        assert!(eval_fitting(&m, &c, &[]).is_err());
    }

    #[test]
    fn mmd_cov_trivial_cases() {
        let c = clouds(Family::Chair, 5, 24);
        assert_eq!(eval_mmd_cov(&c, &c).unwrap(), (0.0, 1.0));
        let (_, cov) = eval_mmd_cov(&c[..1], &c).unwrap();
        assert_eq!(cov, 1.0 / 5.0);
    }

    #[test]
    fn mmd_cov_matches_double_loop() {
        let g = clouds(Family::Hinge, 10, 20);
        let r = clouds(Family::Table, 10, 20);
        let mut mmd = 0.0;
        let mut hit = [false; 10];
        for a in &g {
            let d: Vec<f64> = r.iter().map(|b| chamfer(a, b).value).collect();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            mmd += min;
            hit[d.iter().position(|v| *v == min).unwrap()] = true;
        }
        let (m, cov) = eval_mmd_cov(&g, &r).unwrap();
        assert!((m - mmd / 10.0).abs() < 1e-15);
        assert_eq!(cov, hit.iter().filter(|h| **h).count() as f64 / 10.0);
    }

    #[test]
    fn degenerate_parallelograms_vanish() {
        let m = tiny(24, 4, Variant::Standard, 2);
        let c = clouds(Family::Table, 3, 24);
        assert_eq!(parallelogram_gap(&m, &c[0], &c[0], &c[0]).unwrap(), 0.0);
        // z = y: both sides are y ⊕ →xy.
        assert_eq!(parallelogram_gap(&m, &c[0], &c[2], &c[2]).unwrap(), 0.0);
        let a = eval_parallelogram(&m, &c, &[(0, 1, 2), (2, 1, 0)]).unwrap();
        assert_eq!(a, eval_parallelogram(&m, &c, &[(0, 1, 2), (2, 1, 0)]).unwrap());
    }

    #[test]
    fn two_way_error_matches_definition() {
        let m = tiny(24, 4, Variant::Standard, 3);
        let c = clouds(Family::Table, 2, 24);
        assert_eq!(two_way_error(&m, &c[0], &c[0]).unwrap(), 0.0);
        let xy = m.deform(&c[0], &c[1]).unwrap();
        let yx = m.deform(&c[1], &c[0]).unwrap();
        let mut oracle = 0.0;
        for i in 0..24 {
            for k in 0..3 {
                let v = xy.points()[i][k] - c[0].points()[i][k] + yx.points()[i][k] - c[1].points()[i][k];
                oracle += v * v;
            }
        }
        assert!((two_way_error(&m, &c[0], &c[1]).unwrap() - oracle / 24.0).abs() < 1e-15);
    }

    #[test]
    fn zero_dictionary_model_has_no_two_way_error() {
        let mut m = tiny(24, 4, Variant::Standard, 4);
        let names: Vec<(String, Vec<usize>, usize)> = m.tensors().iter().map(|(n, s, d)| (n.clone(), s.clone(), d.len())).collect();
        for (name, shape, len) in names {
            if name.starts_with("dict_head") {
                m.set_tensor(&name, &shape, &alloc::vec![0.0; len]).unwrap();
            }
        }
        let c = clouds(Family::Table, 2, 24);
        assert_eq!(two_way_error(&m, &c[0], &c[1]).unwrap(), 0.0);
    }

    #[test]
    fn pair_and_triple_sampling() {
        let ids = [3, 5, 8, 9];
        let p = sample_pairs(&ids, 100, 1).unwrap();
        assert!(p.iter().all(|(a, b)| a != b && ids.contains(a) && ids.contains(b)));
        assert_eq!(p, sample_pairs(&ids, 100, 1).unwrap());
        let t = sample_triples(&ids, 50, 1).unwrap();
        assert!(t.iter().all(|(a, b, c)| a != b && b != c && a != c));
        let c = clouds(Family::Table, 10, 16);
        let ids: Vec<usize> = (0..10).collect();
        let w = worst_pairs(&c, &ids, 30, 5, 2).unwrap();
        let cd: Vec<f64> = w.iter().map(|&(i, j)| chamfer(&c[i], &c[j]).value).collect();
        assert!(cd.windows(2).all(|v| v[0] >= v[1]));
        let all = sample_pairs(&ids, 30, 2).unwrap();
        let fifth = cd[4];
        assert_eq!(all.iter().filter(|&&(i, j)| chamfer(&c[i], &c[j]).value > fifth).count() <= 4, true);
    }

    #[test]
    fn ratios_of_default_table_are_zero() {
        let base = gen_table(&Params::default_for(Family::Table), 128, 1).unwrap();
        let r = table_structure_ratios(&base.handle_space, &base, &base.handle_space.defaults[..]);
        assert_eq!(r, [0.0; 4]);
        let m = tiny(128, 8, Variant::Standard, 5);
        let rep = eval_symmetry_discovery_scaled(&m, &base, 20, 1, 0.0).unwrap();
        for c in 0..4 {
            assert!(rep.unprojected[c] == 0.0);
            assert!(rep.projected[c].abs() < 1e-9, "{:?}", rep);
        }
    }

    #[test]
    fn symmetry_discovery_is_deterministic_and_table_only() {
        let base = gen_table(&Params::default_for(Family::Table), 64, 1).unwrap();
        let m = tiny(64, 8, Variant::Standard, 6);
        let a = eval_symmetry_discovery(&m, &base, 30, 9).unwrap();
        assert_eq!(a, eval_symmetry_discovery(&m, &base, 30, 9).unwrap());
        assert!(a.unprojected.iter().any(|v| *v > 0.0));
        let hinge = crate::datagen::gen_hinge(&Params::default_for(Family::Hinge), 64, 1).unwrap();
        assert!(eval_symmetry_discovery(&m, &hinge, 5, 0).is_err());
    }

    #[test]
    fn ground_truth_transfer_of_identity_triple() {
        let d = gen_dataset(Family::Table, 4, 48, 7).unwrap();
        let m = tiny(48, 4, Variant::Standard, 7);
        // src = tgt: the truth is dst itself (up to rounding of p + q − q)
        // and transfer leaves dst alone.
        let (t, b) = eval_transfer_ground_truth(&m, &d.shapes, &[(0, 0, 2)], 7).unwrap();
        assert!(t < 1e-28 && b < 1e-28);
        assert_eq!(t, b);
    }

    #[test]
    fn full_report_is_nonnegative_and_round_trips() {
        let d = gen_dataset(Family::Table, 12, 32, 8).unwrap();
        let m = tiny(32, 4, Variant::Standard, 8);
        let ids: Vec<usize> = (0..12).collect();
        let cfg = EvalConfig {
            fitting_pairs: 5,
            parallelogram_triples: 5,
            two_way_candidates: 10,
            two_way_keep: 3,
            mmd_targets: 2,
            mmd_pairs: 3,
            symmetry_trials: 5,
            seed: 1,
        };
        let r = evaluate(&m, &d.shapes, &ids, 8, &cfg).unwrap();
        let sym = r.symmetry_ratios.unwrap();
        assert!([r.fitting_cd, r.mmd_cd, r.parallelogram_cd, r.two_way].iter().chain(sym.iter()).all(|v| *v >= 0.0));
        assert!((0.0..=1.0).contains(&r.cov_cd));
        let back: MetricsReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r, evaluate(&m, &d.shapes, &ids, 8, &cfg).unwrap());
    }
}
