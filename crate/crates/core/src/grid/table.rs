use crate::critic::ActionValue;
use crate::dynamics::BoxSet;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative distance below which a fractional grid coordinate snaps to the
/// nearest node, so node queries reproduce stored values bit-for-bit.
const NODE_SNAP: f64 = 1e-9;

/// Tabular Q-function on a regular state × action grid.
///
/// Nodes are stored row-major over the joint coordinate `(x₁..xₙ, a₁..aₘ)`,
/// last action coordinate fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridQ<S> {
    state_box: BoxSet<S>,
    action_box: BoxSet<S>,
    resolution: Vec<usize>,
    strides: Vec<usize>,
    values: Vec<S>,
}

/// Corner indices and multilinear weights for one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil<S> {
    pub nodes: Vec<u32>,
    pub weights: Vec<S>,
}

impl<S: Real> Stencil<S> {
    pub fn eval(&self, values: &[S]) -> S {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&i, &w)| w * values[i as usize])
            .sum()
    }
}

impl<S: Real> GridQ<S> {
    /// Grid filled with `fill`. `resolution` has one entry (≥ 2) per state
    /// and action coordinate.
    pub fn new(state_box: BoxSet<S>, action_box: BoxSet<S>, resolution: Vec<usize>, fill: S) -> Result<Self> {
        let dims = state_box.dim() + action_box.dim();
        if resolution.len() != dims {
            return Err(Error::Shape(format!(
                "{} resolutions for {dims} grid dimensions",
                resolution.len()
            )));
        }
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::InvalidArgument("every grid dimension needs at least 2 points".into()));
        }
        if state_box.widths().iter().chain(&action_box.widths()).any(|w| !(*w > S::zero())) {
            return Err(Error::InvalidArgument("grid boxes must have positive width".into()));
        }
        let count: usize = resolution.iter().product();
        if count > u32::MAX as usize {
            return Err(Error::InvalidArgument("grid too large".into()));
        }
        let mut strides = vec![1; dims];
        for d in (0..dims.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * resolution[d + 1];
        }
        Ok(Self {
            state_box,
            action_box,
            resolution,
            strides,
            values: vec![fill; count],
        })
    }

    /// Grid sharing this geometry with values from `f(x, a)` at each node.
    pub fn from_fn(&self, mut f: impl FnMut(&[S], &[S]) -> S) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            let (x, a) = self.node_point(i);
            out.values[i] = f(&x, &a);
        }
        out
    }

    pub fn with_values(&self, values: Vec<S>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "{} values for {} nodes",
                values.len(),
                self.values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid values".into()));
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn state_box(&self) -> &BoxSet<S> {
        &self.state_box
    }

    pub fn action_box(&self) -> &BoxSet<S> {
        &self.action_box
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_box.dim()
    }

    fn dim_bounds(&self, d: usize) -> (S, S) {
        let n = self.state_dim();
        if d < n {
            (self.state_box.lo[d], self.state_box.hi[d])
        } else {
            (self.action_box.lo[d - n], self.action_box.hi[d - n])
        }
    }

    /// Coordinate of grid line `i` along joint dimension `d`.
    pub fn coordinate(&self, d: usize, i: usize) -> S {
        let (lo, hi) = self.dim_bounds(d);
        let last = self.resolution[d] - 1;
        if i == last {
            return hi;
        }
        lo + (hi - lo) * S::from_usize(i).unwrap() / S::from_usize(last).unwrap()
    }

    /// Multi-index of flat node `i`.
    pub fn node_index(&self, mut i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let k = i / s;
                i %= s;
                k
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// `(x, a)` of flat node `i`.
    pub fn node_point(&self, i: usize) -> (Vec<S>, Vec<S>) {
        let idx = self.node_index(i);
        let n = self.state_dim();
        let coords: Vec<S> = idx.iter().enumerate().map(|(d, &k)| self.coordinate(d, k)).collect();
        (coords[..n].to_vec(), coords[n..].to_vec())
    }

    /// Cell index and fractional offset along dimension `d`.
    fn locate(&self, d: usize, v: S) -> (usize, S) {
        let (lo, hi) = self.dim_bounds(d);
        let last = self.resolution[d] - 1;
        let lastf = S::from_usize(last).unwrap();
        let mut t = (v - lo) / (hi - lo) * lastf;
        let nearest = t.round();
        if (t - nearest).abs() <= S::lit(NODE_SNAP) * (S::one() + lastf) {
            t = nearest;
        }
        let t = t.max(S::zero()).min(lastf);
        let cell = t.floor().to_usize().unwrap_or(0).min(last - 1);
        (cell, t - S::from_usize(cell).unwrap())
    }

    fn check_inside(&self, x: &[S], a: &[S]) -> Result<()> {
        if x.len() != self.state_dim() || a.len() != self.action_dim() {
            return Err(Error::Shape("query dimensions".into()));
        }
        if !self.state_box.contains(x) || !self.action_box.contains(a) {
            return Err(Error::InvalidArgument("query point outside the grid boxes".into()));
        }
        Ok(())
    }

    /// Corner nodes and weights for `(x, a)`, which must lie in the boxes.
    pub fn stencil(&self, x: &[S], a: &[S]) -> Result<Stencil<S>> {
        self.check_inside(x, a)?;
        Ok(self.stencil_unchecked(x, a))
    }

    pub(crate) fn stencil_unchecked(&self, x: &[S], a: &[S]) -> Stencil<S> {
        let dims = self.resolution.len();
        let located: Vec<(usize, S)> = x
            .iter()
            .chain(a)
            .enumerate()
            .map(|(d, &v)| self.locate(d, v))
            .collect();
        let base: usize = located.iter().zip(&self.strides).map(|((c, _), s)| c * s).sum();
        let mut nodes = Vec::with_capacity(1 << dims);
        let mut weights = Vec::with_capacity(1 << dims);
        for corner in 0..(1usize << dims) {
            let mut w = S::one();
            let mut offset = 0;
            for (d, &(_, frac)) in located.iter().enumerate() {
                if corner >> d & 1 == 1 {
                    w *= frac;
                    offset += self.strides[d];
                } else {
                    w *= S::one() - frac;
                }
            }
            if w != S::zero() {
                nodes.push((base + offset) as u32);
                weights.push(w);
            }
        }
        Stencil { nodes, weights }
    }

    /// Multilinear interpolation over the enclosing cell.
    pub fn interp(&self, x: &[S], a: &[S]) -> Result<S> {
        Ok(self.stencil(x, a)?.eval(&self.values))
    }

    /// Gradient of the interpolant with respect to the action coordinates,
    /// taken inside the cell selected by [`GridQ::stencil`].
    pub fn interp_action_gradient(&self, x: &[S], a: &[S]) -> Result<Vec<S>> {
        self.check_inside(x, a)?;
        let n = self.state_dim();
        let dims = self.resolution.len();
        let located: Vec<(usize, S)> = x
            .iter()
            .chain(a)
            .enumerate()
            .map(|(d, &v)| self.locate(d, v))
            .collect();
        let base: usize = located.iter().zip(&self.strides).map(|((c, _), s)| c * s).sum();
        let mut grad = vec![S::zero(); self.action_dim()];
        for (j, g) in grad.iter_mut().enumerate() {
            let dd = n + j;
            let (lo, hi) = self.dim_bounds(dd);
            let spacing = (hi - lo) / S::from_usize(self.resolution[dd] - 1).unwrap();
            for corner in 0..(1usize << dims) {
                let mut w = S::one();
                let mut offset = 0;
                for (d, &(_, frac)) in located.iter().enumerate() {
                    let up = corner >> d & 1 == 1;
                    if up {
                        offset += self.strides[d];
                    }
                    if d == dd {
                        w *= if up { S::one() } else { -S::one() };
                    } else {
                        w *= if up { frac } else { S::one() - frac };
                    }
                }
                *g += w * self.values[base + offset] / spacing;
            }
        }
        Ok(grad)
    }

    /// Sup-norm distance to another grid of the same shape.
    pub fn sup_distance(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (*a - *b).abs())
            .fold(S::zero(), S::max)
    }

    /// `sup_x (max_a Q − min_a Q)` over state nodes.
    pub fn action_spread(&self) -> S {
        let per_state: usize = self.resolution[self.state_dim()..].iter().product();
        self.values
            .chunks(per_state)
            .map(|block| {
                let max = block.iter().copied().fold(S::neg_infinity(), S::max);
                let min = block.iter().copied().fold(S::infinity(), S::min);
                max - min
            })
            .fold(S::zero(), S::max)
    }
}

/// Read-out adapter so greedy rollouts can be driven by a tabular Q.
/// Queries are saturated into the grid boxes.
impl<S: Real> ActionValue<S> for GridQ<S> {
    fn state_dim(&self) -> usize {
        GridQ::state_dim(self)
    }

    fn action_dim(&self) -> usize {
        GridQ::action_dim(self)
    }

    fn value(&self, x: &[S], a: &[S]) -> S {
        let (x, a) = (self.state_box.clip(x), self.action_box.clip(a));
        self.stencil_unchecked(&x, &a).eval(&self.values)
    }

    fn action_gradient(&self, x: &[S], a: &[S]) -> Vec<S> {
        let (x, a) = (self.state_box.clip(x), self.action_box.clip(a));
        self.interp_action_gradient(&x, &a).expect("clipped query")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn grid_2x1(res: usize) -> GridQ<f64> {
        GridQ::new(
            BoxSet::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap(),
            BoxSet::symmetric(1, 0.5),
            vec![res, res + 1, res + 2],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn nodes_reproduce_values_exactly() {
        let mut rng = Rng::new(4);
        let g = grid_2x1(5);
        let g = g.from_fn(|_, _| rng.uniform(-3.0, 3.0));
        for i in 0..g.len() {
            let (x, a) = g.node_point(i);
            assert_eq!(g.interp(&x, &a).unwrap(), g.values()[i]);
        }
    }

    #[test]
    fn affine_functions_are_reproduced() {
        let f = |x: &[f64], a: &[f64]| 0.3 + 1.5 * x[0] - 2.0 * x[1] + 0.7 * a[0];
        let g = grid_2x1(4).from_fn(f);
        let mut rng = Rng::new(10);
        for _ in 0..200 {
            let x = [rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0)];
            let a = [rng.uniform(-0.5, 0.5)];
            assert!((g.interp(&x, &a).unwrap() - f(&x, &a)).abs() < 1e-12);
            let ga = g.interp_action_gradient(&x, &a).unwrap();
            assert!((ga[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn one_dimensional_midpoint() {
        let g = GridQ::new(BoxSet::symmetric(1, 1.0), BoxSet::symmetric(1, 1.0), vec![2, 2], 0.0).unwrap();
        let g = g.with_values(vec![2.0, 2.0, 4.0, 4.0]).unwrap();
        assert_eq!(g.interp(&[0.0], &[0.3]).unwrap(), 3.0);
    }

    #[test]
    fn outside_queries_are_rejected() {
        let g = grid_2x1(3);
        assert!(g.interp(&[1.5, 1.0], &[0.0]).is_err());
        assert!(g.interp(&[0.0, 1.0], &[0.6]).is_err());
        assert!(g.interp(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn spread_of_action_independent_grid_is_zero() {
        let g = grid_2x1(3).from_fn(|x, _| x[0] * x[1]);
        assert_eq!(g.action_spread(), 0.0);
        let g = grid_2x1(3).from_fn(|_, a| a[0]);
        assert!((g.action_spread() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constructor_validation() {
        assert!(GridQ::new(BoxSet::symmetric(1, 1.0), BoxSet::symmetric(1, 1.0), vec![1, 3], 0.0).is_err());
        assert!(GridQ::new(BoxSet::symmetric(1, 1.0), BoxSet::symmetric(1, 1.0), vec![3], 0.0).is_err());
        let g = grid_2x1(2);
        assert!(g.with_values(vec![0.0; 3]).is_err());
    }
}
