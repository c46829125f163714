//! Log-barrier interior-point reference solver for small block RMD programs
//!
//! ```text
//! min Σ_j ‖θ_j‖_F   s.t.   ‖G_i θ + g0_i‖_F ≤ γ  for every row block i
//! ```
//!
//! written as a second-order cone program in `(vec θ, t)` with epigraph
//! variables `t_j ≥ ‖θ_j‖_F`. Shares no code with the ADMM solver; only the
//! dense Cholesky comes from nalgebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub struct Instance {
    pub g: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub gamma: f64,
}

pub struct Reference {
    pub theta: DMatrix<f64>,
    pub objective: f64,
    pub max_residual: f64,
    pub newton_steps: usize,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut o = vec![0];
    for d in dims {
        o.push(o.last().unwrap() + d);
    }
    o
}

pub fn block_objective(theta: &DMatrix<f64>, col_dims: &[usize]) -> f64 {
    let o = offsets(col_dims);
    (0..col_dims.len()).map(|j| theta.rows(o[j], col_dims[j]).norm()).sum()
}

pub fn max_residual(inst: &Instance, theta: &DMatrix<f64>) -> f64 {
    let r = &inst.g * theta + &inst.g0;
    let o = offsets(&inst.row_dims);
    (0..inst.row_dims.len())
        .map(|i| r.rows(o[i], inst.row_dims[i]).norm())
        .fold(0.0, f64::max)
}

struct Layout {
    c: usize,
    dt: usize,
    col_o: Vec<usize>,
    row_o: Vec<usize>,
}

impl Layout {
    fn nx(&self) -> usize {
        self.c * self.dt
    }
    // index of θ[(r, col)] in the stacked variable
    fn ix(&self, r: usize, col: usize) -> usize {
        col * self.c + r
    }
}

fn unpack(l: &Layout, x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(l.c, l.dt, &x.as_slice()[..l.nx()])
}

/// Barrier value; `None` outside the strict interior.
fn barrier(inst: &Instance, l: &Layout, x: &DVector<f64>, tau: f64) -> Option<f64> {
    let theta = unpack(l, x);
    let p = inst.col_dims.len();
    let mut f = 0.0;
    for j in 0..p {
        let t = x[l.nx() + j];
        let s = t * t - theta.rows(l.col_o[j], inst.col_dims[j]).norm_squared();
        if !(t > 0.0 && s > 0.0) {
            return None;
        }
        f += tau * t - s.ln();
    }
    let r = &inst.g * &theta + &inst.g0;
    let g2 = inst.gamma * inst.gamma;
    for i in 0..inst.row_dims.len() {
        let c = g2 - r.rows(l.row_o[i], inst.row_dims[i]).norm_squared();
        if c <= 0.0 {
            return None;
        }
        f -= c.ln();
    }
    Some(f)
}

fn grad_hess(inst: &Instance, l: &Layout, x: &DVector<f64>, tau: f64) -> (DVector<f64>, DMatrix<f64>) {
    let nx = l.nx();
    let p = inst.col_dims.len();
    let n = nx + p;
    let theta = unpack(l, x);
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);

    for j in 0..p {
        let tj = nx + j;
        let t = x[tj];
        let rows: Vec<usize> = (l.col_o[j]..l.col_o[j + 1]).collect();
        let idx: Vec<usize> = (0..l.dt).flat_map(|col| rows.iter().map(move |&r| (r, col))).map(|(r, c)| l.ix(r, c)).collect();
        let s = t * t - idx.iter().map(|&k| x[k] * x[k]).sum::<f64>();
        // s = yᵀJy with J = diag(−I, 1), y = (θ_j, t_j)
        let mut jy: Vec<(usize, f64)> = idx.iter().map(|&k| (k, -x[k])).collect();
        jy.push((tj, t));
        grad[tj] += tau;
        for &(k, v) in &jy {
            grad[k] -= 2.0 * v / s;
        }
        for &k in &idx {
            hess[(k, k)] += 2.0 / s;
        }
        hess[(tj, tj)] -= 2.0 / s;
        for &(a, va) in &jy {
            for &(b, vb) in &jy {
                hess[(a, b)] += 4.0 * va * vb / (s * s);
            }
        }
    }

    let r = &inst.g * &theta + &inst.g0;
    let g2 = inst.gamma * inst.gamma;
    for i in 0..inst.row_dims.len() {
        let (o, d) = (l.row_o[i], inst.row_dims[i]);
        let ri = r.rows(o, d);
        let c = g2 - ri.norm_squared();
        let gi = inst.g.rows(o, d);
        // A_i = I_dt ⊗ G_i acting on vec θ
        let mut atr = DVector::zeros(nx);
        for col in 0..l.dt {
            let v = gi.transpose() * ri.column(col);
            for rr in 0..l.c {
                atr[l.ix(rr, col)] = v[rr];
            }
        }
        let gtg = gi.transpose() * gi;
        for k in 0..nx {
            grad[k] += 2.0 * atr[k] / c;
        }
        for col in 0..l.dt {
            for a in 0..l.c {
                for b in 0..l.c {
                    hess[(l.ix(a, col), l.ix(b, col))] += 2.0 * gtg[(a, b)] / c;
                }
            }
        }
        for a in 0..nx {
            for b in 0..nx {
                hess[(a, b)] += 4.0 * atr[a] * atr[b] / (c * c);
            }
        }
    }
    (grad, hess)
}

/// Solves from a strictly feasible `start`. Returns `None` if Newton fails.
pub fn solve(inst: &Instance, start: &DMatrix<f64>) -> Option<Reference> {
    let l = Layout {
        c: inst.g.ncols(),
        dt: inst.g0.ncols(),
        col_o: offsets(&inst.col_dims),
        row_o: offsets(&inst.row_dims),
    };
    let nx = l.nx();
    let p = inst.col_dims.len();
    let m = (p + inst.row_dims.len()) as f64;
    let mut x = DVector::zeros(nx + p);
    x.as_mut_slice()[..nx].copy_from_slice(start.as_slice());
    for j in 0..p {
        x[nx + j] = start.rows(l.col_o[j], inst.col_dims[j]).norm() + 1.0;
    }
    barrier(inst, &l, &x, 1.0)?;

    let mut tau = 1.0;
    let mut steps = 0;
    while 2.0 * m / tau > 1e-11 {
        for _ in 0..200 {
            let (grad, hess) = grad_hess(inst, &l, &x, tau);
            let chol = hess.cholesky()?;
            let dx = -chol.solve(&grad);
            let dec = -grad.dot(&dx);
            steps += 1;
            if dec / 2.0 < 1e-12 {
                break;
            }
            let f0 = barrier(inst, &l, &x, tau)?;
            let mut a = 1.0;
            loop {
                let cand = &x + &dx * a;
                if let Some(f) = barrier(inst, &l, &cand, tau) {
                    if f <= f0 - 0.25 * a * dec {
                        x = cand;
                        break;
                    }
                }
                a *= 0.5;
                if a < 1e-14 {
                    return None;
                }
            }
        }
        tau *= 8.0;
    }
    let theta = unpack(&l, &x);
    Some(Reference {
        objective: block_objective(&theta, &inst.col_dims),
        max_residual: max_residual(inst, &theta),
        theta,
        newton_steps: steps,
    })
}

/// Random instance with a known strictly feasible point `θ*` (block sparse):
/// `g0 = −Gθ* + 0.3·noise`, `γ` a random multiple (1.2 to 3) of the largest
/// noise block norm.
pub fn random_instance<R: rand::Rng>(rng: &mut R) -> (Instance, DMatrix<f64>) {
    use rand_distr::{Distribution, StandardNormal};
    let p = rng.random_range(1..=8);
    let q = rng.random_range(1..=8);
    let dt = rng.random_range(1..=3);
    let col_dims: Vec<usize> = (0..p).map(|_| rng.random_range(1..=3)).collect();
    let row_dims: Vec<usize> = (0..q).map(|_| rng.random_range(1..=3)).collect();
    let rows: usize = row_dims.iter().sum();
    let cols: usize = col_dims.iter().sum();
    let normal = |r: usize, c: usize, rng: &mut R| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng));
    let g: DMatrix<f64> = normal(rows, cols, rng);
    let mut theta = normal(cols, dt, rng);
    let co = offsets(&col_dims);
    for j in 0..p {
        if rng.random_bool(0.5) {
            theta.rows_mut(co[j], col_dims[j]).fill(0.0);
        }
    }
    let noise = normal(rows, dt, rng) * 0.3;
    let g0 = -(&g * &theta) + &noise;
    let ro = offsets(&row_dims);
    let worst = (0..q).map(|i| noise.rows(ro[i], row_dims[i]).norm()).fold(0.0, f64::max);
    let gamma = worst * rng.random_range(1.2..3.0);
    (
        Instance {
            g,
            g0,
            row_dims,
            col_dims,
            gamma,
        },
        theta,
    )
}
