//! Recurrent patch sweeps over an encoded feature map.
//!
//! A feature map is cut into non-overlapping patches laid out on a
//! `rows × cols` grid. Each column of the grid is then read as a sequence by
//! two vanilla tanh recurrent layers (top to bottom and bottom to top), and
//! their hidden states are concatenated per cell. The result is swept again
//! along each grid row (left to right and right to left) and concatenated,
//! giving one `2U`-channel vector per patch that depends on the whole map.

use crate::error::{Error, Result};
use crate::layers::gemm::{gemm, Mat};
use crate::rng::{glorot_init, RngState};
use crate::tensor::{Real, Tensor};

/// Non-overlapping patches of an `h × w × c` map. Patch `(i, j)` covers rows
/// `i·patch_h .. (i+1)·patch_h` and columns `j·patch_w .. (j+1)·patch_w`, and is
/// flattened row by row with channels innermost.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid<T = f32> {
    pub rows: usize,
    pub cols: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub channels: usize,
    /// Row-major over the grid; each of length `patch_h · patch_w · channels`.
    pub patches: Vec<Vec<T>>,
}

impl<T: Real> PatchGrid<T> {
    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w * self.channels
    }

    pub fn patch(&self, i: usize, j: usize) -> &[T] {
        &self.patches[i * self.cols + j]
    }

    /// The grid as a `rows × cols × patch_len` map.
    pub fn to_map(&self) -> Result<Tensor<T>> {
        self.check()?;
        Tensor::from_vec(
            &[self.rows, self.cols, self.patch_len()],
            self.patches.concat(),
        )
    }

    /// Inverse of [`PatchGrid::to_map`].
    pub fn from_map(
        map: &Tensor<T>,
        patch_h: usize,
        patch_w: usize,
        channels: usize,
    ) -> Result<Self> {
        let (rows, cols, len) = map.hwc()?;
        if len != patch_h * patch_w * channels {
            return Err(Error::shape(format!(
                "map cells have {len} values, patches need {}",
                patch_h * patch_w * channels
            )));
        }
        Ok(Self {
            rows,
            cols,
            patch_h,
            patch_w,
            channels,
            patches: map.data().chunks_exact(len).map(<[T]>::to_vec).collect(),
        })
    }

    fn check(&self) -> Result<()> {
        if self.patches.len() != self.rows * self.cols {
            return Err(Error::shape(format!(
                "{}×{} grid holds {} patches",
                self.rows,
                self.cols,
                self.patches.len()
            )));
        }
        let len = self.patch_len();
        if let Some(k) = self.patches.iter().position(|p| p.len() != len) {
            return Err(Error::shape(format!(
                "patch {k} has {} values, expected {len}",
                self.patches[k].len()
            )));
        }
        Ok(())
    }
}

pub fn split_patches<T: Real>(
    feature: &Tensor<T>,
    patch_w: usize,
    patch_h: usize,
) -> Result<PatchGrid<T>> {
    let (h, w, c) = feature.hwc()?;
    if patch_w == 0 || patch_h == 0 || h % patch_h != 0 || w % patch_w != 0 {
        return Err(Error::shape(format!(
            "{h}×{w} map is not divisible into {patch_h}×{patch_w} patches"
        )));
    }
    let (rows, cols) = (h / patch_h, w / patch_w);
    let src = feature.data();
    let mut patches = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut p = Vec::with_capacity(patch_h * patch_w * c);
            for dy in 0..patch_h {
                let start = ((i * patch_h + dy) * w + j * patch_w) * c;
                p.extend_from_slice(&src[start..start + patch_w * c]);
            }
            patches.push(p);
        }
    }
    Ok(PatchGrid {
        rows,
        cols,
        patch_h,
        patch_w,
        channels: c,
        patches,
    })
}

pub fn merge_patches<T: Real>(grid: &PatchGrid<T>) -> Result<Tensor<T>> {
    grid.check()?;
    let (h, w, c) = (
        grid.rows * grid.patch_h,
        grid.cols * grid.patch_w,
        grid.channels,
    );
    let mut out = vec![T::default(); h * w * c];
    let row_len = grid.patch_w * c;
    for i in 0..grid.rows {
        for j in 0..grid.cols {
            let p = grid.patch(i, j);
            for dy in 0..grid.patch_h {
                let start = ((i * grid.patch_h + dy) * w + j * grid.patch_w) * c;
                out[start..start + row_len].copy_from_slice(&p[dy * row_len..(dy + 1) * row_len]);
            }
        }
    }
    Tensor::from_vec(&[h, w, c], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Top to bottom along each grid column.
    Down,
    /// Bottom to top along each grid column.
    Up,
    /// Left to right along each grid row.
    Right,
    /// Right to left along each grid row.
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Vertical,
    Horizontal,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Down,
        Direction::Up,
        Direction::Right,
        Direction::Left,
    ];

    pub fn axis(self) -> Axis {
        match self {
            Direction::Down | Direction::Up => Axis::Vertical,
            Direction::Right | Direction::Left => Axis::Horizontal,
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Down => Direction::Up,
            Direction::Up => Direction::Down,
            Direction::Right => Direction::Left,
            Direction::Left => Direction::Right,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Up => "up",
            Direction::Right => "right",
            Direction::Left => "left",
        }
    }

    /// Cell indices of each independent sequence, in visiting order.
    fn sequences(self, rows: usize, cols: usize) -> Vec<Vec<usize>> {
        match self {
            Direction::Down => (0..cols)
                .map(|j| (0..rows).map(|i| i * cols + j).collect())
                .collect(),
            Direction::Up => (0..cols)
                .map(|j| (0..rows).rev().map(|i| i * cols + j).collect())
                .collect(),
            Direction::Right => (0..rows)
                .map(|i| (0..cols).map(|j| i * cols + j).collect())
                .collect(),
            Direction::Left => (0..rows)
                .map(|i| (0..cols).rev().map(|j| i * cols + j).collect())
                .collect(),
        }
    }
}

/// Parameters of one directional recurrent layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepParams<T = f32> {
    /// `input_len × units`
    pub input_weights: Tensor<T>,
    /// `units × units`
    pub recurrent_weights: Tensor<T>,
    /// `units`
    pub bias: Tensor<T>,
}

impl<T: Real> SweepParams<T> {
    pub fn zeros(input_len: usize, units: usize) -> Result<Self> {
        Ok(Self {
            input_weights: Tensor::zeros(&[input_len, units])?,
            recurrent_weights: Tensor::zeros(&[units, units])?,
            bias: Tensor::zeros(&[units])?,
        })
    }

    pub fn glorot(input_len: usize, units: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            input_weights: glorot_init(&[input_len, units], input_len, units, rng)?,
            recurrent_weights: glorot_init(&[units, units], units, units, rng)?,
            bias: Tensor::zeros(&[units])?,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_weights.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.bias.len()
    }

    fn check(&self) -> Result<(usize, usize)> {
        let [p, u] = self.input_weights.shape() else {
            return Err(Error::shape("input weights must be p×U"));
        };
        self.recurrent_weights.expect_shape(&[*u, *u])?;
        self.bias.expect_shape(&[*u])?;
        Ok((*p, *u))
    }

    pub fn tensors(&self) -> [&Tensor<T>; 3] {
        [&self.input_weights, &self.recurrent_weights, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [
            &mut self.input_weights,
            &mut self.recurrent_weights,
            &mut self.bias,
        ]
    }

    pub fn cast<U: Real>(&self) -> SweepParams<U> {
        SweepParams {
            input_weights: self.input_weights.cast(),
            recurrent_weights: self.recurrent_weights.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Hidden states of one directional sweep, one `U`-vector per grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput<T = f32> {
    pub direction: Direction,
    /// `rows × cols × U`
    pub activations: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct SweepRecord<T: Real> {
    direction: Direction,
    input: Tensor<T>,
    params: SweepParams<T>,
    /// Hidden states in `f64`, laid out like the activations.
    states: Vec<f64>,
}

/// Runs a vanilla tanh recurrence `z_t = tanh(x_tᵀ W_x + z_{t−1}ᵀ W_z + b)`,
/// `z_0 = 0`, along every grid column (down/up) or row (right/left) of a
/// `rows × cols × k` map.
pub fn directional_sweep<T: Real>(
    input: &Tensor<T>,
    direction: Direction,
    params: &SweepParams<T>,
) -> Result<(SweepOutput<T>, SweepRecord<T>)> {
    let (rows, cols, k) = input.hwc()?;
    let (p, u) = params.check()?;
    if p != k {
        return Err(Error::shape(format!(
            "sweep expects {p} values per cell, input has {k}"
        )));
    }
    let cells = rows * cols;
    let x = input.to_f64_vec();
    let wx = params.input_weights.to_f64_vec();
    let wz = params.recurrent_weights.to_f64_vec();

    let mut pre = Vec::with_capacity(cells * u);
    for _ in 0..cells {
        pre.extend(params.bias.data().iter().map(|b| b.to_f64()));
    }
    gemm(Mat::new(&x, cells, k), Mat::new(&wx, k, u), 1.0, &mut pre);

    let mut states = vec![0.0; cells * u];
    for seq in direction.sequences(rows, cols) {
        let mut prev: Option<usize> = None;
        for &cell in &seq {
            let mut acc = pre[cell * u..(cell + 1) * u].to_vec();
            if let Some(pc) = prev {
                for (a, &zp) in states[pc * u..(pc + 1) * u].iter().enumerate() {
                    if zp == 0.0 {
                        continue;
                    }
                    for (v, w) in acc.iter_mut().zip(&wz[a * u..(a + 1) * u]) {
                        *v += zp * w;
                    }
                }
            }
            for (s, v) in states[cell * u..(cell + 1) * u].iter_mut().zip(&acc) {
                *s = v.tanh();
            }
            prev = Some(cell);
        }
    }

    let activations = Tensor::from_f64_vec(&[rows, cols, u], states.clone())?;
    let record = SweepRecord {
        direction,
        input: input.clone(),
        params: params.clone(),
        states,
    };
    Ok((
        SweepOutput {
            direction,
            activations,
        },
        record,
    ))
}

/// Backpropagation through time for one sweep. Returns the input gradient and
/// `[d input_weights, d recurrent_weights, d bias]`.
pub fn sweep_backward<T: Real>(
    rec: SweepRecord<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, [Tensor<T>; 3])> {
    let (rows, cols, k) = rec.input.hwc()?;
    let u = rec.params.units();
    upstream.expect_shape(&[rows, cols, u])?;
    let cells = rows * cols;
    let dout = upstream.to_f64_vec();
    let wz = rec.params.recurrent_weights.to_f64_vec();
    let z = &rec.states;

    let mut dpre = vec![0.0; cells * u];
    let mut dwz = vec![0.0; u * u];
    for seq in rec.direction.sequences(rows, cols) {
        let mut carry = vec![0.0; u];
        for (t, &cell) in seq.iter().enumerate().rev() {
            let da = &mut dpre[cell * u..(cell + 1) * u];
            for q in 0..u {
                let zq = z[cell * u + q];
                da[q] = (dout[cell * u + q] + carry[q]) * (1.0 - zq * zq);
            }
            if t == 0 {
                continue;
            }
            let pc = seq[t - 1];
            for a in 0..u {
                let zp = z[pc * u + a];
                let wrow = &wz[a * u..(a + 1) * u];
                let mut back = 0.0;
                for q in 0..u {
                    dwz[a * u + q] += zp * da[q];
                    back += wrow[q] * da[q];
                }
                carry[a] = back;
            }
        }
    }

    let x = rec.input.to_f64_vec();
    let wx = rec.params.input_weights.to_f64_vec();
    let mut dwx = vec![0.0; k * u];
    gemm(
        Mat::new(&x, cells, k).t(),
        Mat::new(&dpre, cells, u),
        0.0,
        &mut dwx,
    );
    let mut dx = vec![0.0; cells * k];
    gemm(
        Mat::new(&dpre, cells, u),
        Mat::new(&wx, k, u).t(),
        0.0,
        &mut dx,
    );
    let mut db = vec![0.0; u];
    for cell in dpre.chunks_exact(u) {
        for (acc, v) in db.iter_mut().zip(cell) {
            *acc += v;
        }
    }
    Ok((
        Tensor::from_f64_vec(&[rows, cols, k], dx)?,
        [
            Tensor::from_f64_vec(&[k, u], dwx)?,
            Tensor::from_f64_vec(&[u, u], dwz)?,
            Tensor::from_f64_vec(&[u], db)?,
        ],
    ))
}

/// Concatenates two opposite sweeps of the same axis channel-wise, `a` first.
pub fn couple_pair<T: Real>(a: &SweepOutput<T>, b: &SweepOutput<T>) -> Result<Tensor<T>> {
    if a.direction.axis() != b.direction.axis() {
        return Err(Error::shape(format!(
            "cannot couple {} with {}: different axes",
            a.direction.name(),
            b.direction.name()
        )));
    }
    if a.direction == b.direction {
        return Err(Error::shape(format!(
            "cannot couple {} with itself",
            a.direction.name()
        )));
    }
    a.activations.expect_same_shape(&b.activations)?;
    Tensor::concat_channels(&a.activations, &b.activations)
}

/// The four directional layers of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct RenetParams<T = f32> {
    pub down: SweepParams<T>,
    pub up: SweepParams<T>,
    pub right: SweepParams<T>,
    pub left: SweepParams<T>,
}

impl<T: Real> RenetParams<T> {
    /// Vertical sweeps read `patch_len` inputs; horizontal sweeps read the
    /// `2 · units` coupled vertical output.
    pub fn glorot(patch_len: usize, units: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            down: SweepParams::glorot(patch_len, units, rng)?,
            up: SweepParams::glorot(patch_len, units, rng)?,
            right: SweepParams::glorot(2 * units, units, rng)?,
            left: SweepParams::glorot(2 * units, units, rng)?,
        })
    }

    pub fn zeros(patch_len: usize, units: usize) -> Result<Self> {
        Ok(Self {
            down: SweepParams::zeros(patch_len, units)?,
            up: SweepParams::zeros(patch_len, units)?,
            right: SweepParams::zeros(2 * units, units)?,
            left: SweepParams::zeros(2 * units, units)?,
        })
    }

    pub fn get(&self, d: Direction) -> &SweepParams<T> {
        match d {
            Direction::Down => &self.down,
            Direction::Up => &self.up,
            Direction::Right => &self.right,
            Direction::Left => &self.left,
        }
    }

    pub fn get_mut(&mut self, d: Direction) -> &mut SweepParams<T> {
        match d {
            Direction::Down => &mut self.down,
            Direction::Up => &mut self.up,
            Direction::Right => &mut self.right,
            Direction::Left => &mut self.left,
        }
    }

    pub fn units(&self) -> usize {
        self.down.units()
    }

    pub fn cast<U: Real>(&self) -> RenetParams<U> {
        RenetParams {
            down: self.down.cast(),
            up: self.up.cast(),
            right: self.right.cast(),
            left: self.left.cast(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenetRecord<T: Real> {
    input_shape: [usize; 3],
    patch: (usize, usize),
    units: usize,
    sweeps: [SweepRecord<T>; 4],
}

/// Output of one block plus the intermediate coupled vertical map.
#[derive(Clone, Debug)]
pub struct RenetOutput<T = f32> {
    /// `rows × cols × 2U` after the horizontal pair.
    pub output: Tensor<T>,
    /// `rows × cols × 2U` after the vertical pair.
    pub vertical: Tensor<T>,
    pub sweeps: [SweepOutput<T>; 4],
}

/// Splits `input` into `patch_h × patch_w` patches, sweeps the grid down and
/// up, couples the pair, then sweeps that map right and left and couples again.
pub fn renet_block<T: Real>(
    input: &Tensor<T>,
    params: &RenetParams<T>,
    (patch_h, patch_w): (usize, usize),
) -> Result<(RenetOutput<T>, RenetRecord<T>)> {
    let (h, w, c) = input.hwc()?;
    let grid = split_patches(input, patch_w, patch_h)?.to_map()?;
    let (down, rec_down) = directional_sweep(&grid, Direction::Down, &params.down)?;
    let (up, rec_up) = directional_sweep(&grid, Direction::Up, &params.up)?;
    let vertical = couple_pair(&down, &up)?;
    let (right, rec_right) = directional_sweep(&vertical, Direction::Right, &params.right)?;
    let (left, rec_left) = directional_sweep(&vertical, Direction::Left, &params.left)?;
    let output = couple_pair(&right, &left)?;
    let record = RenetRecord {
        input_shape: [h, w, c],
        patch: (patch_h, patch_w),
        units: params.units(),
        sweeps: [rec_down, rec_up, rec_right, rec_left],
    };
    Ok((
        RenetOutput {
            output,
            vertical,
            sweeps: [down, up, right, left],
        },
        record,
    ))
}

/// Returns the input gradient and parameter gradients ordered like
/// [`RenetParams`]: down, up, right, left, each `[W_x, W_z, b]`.
pub fn renet_backward<T: Real>(
    rec: RenetRecord<T>,
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, RenetParams<T>)> {
    let RenetRecord {
        input_shape: [_, _, c],
        patch: (ph, pw),
        units,
        sweeps: [rec_down, rec_up, rec_right, rec_left],
    } = rec;
    let (d_right, d_left) = upstream.split_channels(units)?;
    let (mut d_vertical, g_right) = sweep_backward(rec_right, &d_right)?;
    let (dv_left, g_left) = sweep_backward(rec_left, &d_left)?;
    d_vertical.add_assign(&dv_left)?;

    let (d_down, d_up) = d_vertical.split_channels(units)?;
    let (mut d_grid, g_down) = sweep_backward(rec_down, &d_down)?;
    let (dg_up, g_up) = sweep_backward(rec_up, &d_up)?;
    d_grid.add_assign(&dg_up)?;

    let d_input = merge_patches(&PatchGrid::from_map(&d_grid, ph, pw, c)?)?;
    let into_params = |[input_weights, recurrent_weights, bias]: [Tensor<T>; 3]| SweepParams {
        input_weights,
        recurrent_weights,
        bias,
    };
    Ok((
        d_input,
        RenetParams {
            down: into_params(g_down),
            up: into_params(g_up),
            right: into_params(g_right),
            left: into_params(g_left),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn random_params(p: usize, u: usize, rng: &mut RngState) -> SweepParams<f64> {
        SweepParams {
            input_weights: random(&[p, u], rng),
            recurrent_weights: random(&[u, u], rng),
            bias: random(&[u], rng),
        }
    }

    #[test]
    fn split_example() {
        let x = Tensor::<f32>::from_vec(&[4, 4, 1], (1..=16).map(|v| v as f32).collect()).unwrap();
        let g = split_patches(&x, 2, 2).unwrap();
        assert_eq!((g.rows, g.cols), (2, 2));
        assert_eq!(g.patch(0, 0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(g.patch(1, 1), &[11.0, 12.0, 15.0, 16.0]);
    }

    #[test]
    fn whole_image_patch() {
        let mut rng = RngState::new(1).unwrap();
        let x = random(&[3, 5, 2], &mut rng);
        let g = split_patches(&x, 5, 3).unwrap();
        assert_eq!(g.patches.len(), 1);
        assert_eq!(g.patches[0], x.data());
        assert_eq!(merge_patches(&g).unwrap(), x);
    }

    #[test]
    fn non_divisible_rejected() {
        let x = Tensor::<f32>::zeros(&[5, 4, 1]).unwrap();
        assert!(matches!(split_patches(&x, 2, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn merge_rejects_malformed_grid() {
        let x = Tensor::<f32>::zeros(&[4, 4, 1]).unwrap();
        let mut g = split_patches(&x, 2, 2).unwrap();
        g.patches[3].pop();
        assert!(matches!(merge_patches(&g), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_parameters_zero_output() {
        let mut rng = RngState::new(2).unwrap();
        let x = random(&[3, 4, 5], &mut rng);
        for d in Direction::ALL {
            let (out, _) = directional_sweep(&x, d, &SweepParams::zeros(5, 3).unwrap()).unwrap();
            assert!(out.activations.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_row_down_has_no_recurrence() {
        let mut rng = RngState::new(3).unwrap();
        let x = random(&[1, 4, 3], &mut rng);
        let p = random_params(3, 2, &mut rng);
        let (out, _) = directional_sweep(&x, Direction::Down, &p).unwrap();
        for j in 0..4 {
            for q in 0..2 {
                let mut a = p.bias.data()[q];
                for i in 0..3 {
                    a += x.data()[j * 3 + i] * p.input_weights.data()[i * 2 + q];
                }
                assert!((out.activations.data()[j * 2 + q] - a.tanh()).abs() < 1e-12);
            }
        }
    }

    /// Three-step column unrolled by hand.
    #[test]
    fn three_step_column_matches_unrolled() {
        let mut rng = RngState::new(4).unwrap();
        let (k, u) = (2, 2);
        let x = random(&[3, 1, k], &mut rng);
        let p = random_params(k, u, &mut rng);
        let wx = p.input_weights.data();
        let wz = p.recurrent_weights.data();
        let b = p.bias.data();
        let xs = x.data();
        let step = |xt: &[f64], zp: [f64; 2]| -> [f64; 2] {
            let mut out = [0.0; 2];
            for q in 0..2 {
                let a =
                    b[q] + xt[0] * wx[q] + xt[1] * wx[2 + q] + zp[0] * wz[q] + zp[1] * wz[2 + q];
                out[q] = a.tanh();
            }
            out
        };
        let z1 = step(&xs[0..2], [0.0, 0.0]);
        let z2 = step(&xs[2..4], z1);
        let z3 = step(&xs[4..6], z2);
        let (down, _) = directional_sweep(&x, Direction::Down, &p).unwrap();
        let got = down.activations.data();
        for (i, z) in [z1, z2, z3].iter().enumerate() {
            for q in 0..2 {
                assert!((got[i * 2 + q] - z[q]).abs() < 1e-6);
            }
        }
        // the upward sweep starts from the bottom cell
        let u1 = step(&xs[4..6], [0.0, 0.0]);
        let (up, _) = directional_sweep(&x, Direction::Up, &p).unwrap();
        assert!((up.activations.data()[4] - u1[0]).abs() < 1e-12);
    }

    #[test]
    fn coupling_layout_and_errors() {
        let mut rng = RngState::new(5).unwrap();
        let a = SweepOutput {
            direction: Direction::Down,
            activations: random(&[2, 3, 32], &mut rng),
        };
        let b = SweepOutput {
            direction: Direction::Up,
            activations: Tensor::zeros(&[2, 3, 32]).unwrap(),
        };
        let o = couple_pair(&a, &b).unwrap();
        assert_eq!(o.shape(), &[2, 3, 64]);
        for cell in o.data().chunks(64) {
            assert!(cell[32..].iter().all(|&v| v == 0.0));
        }
        let r = SweepOutput {
            direction: Direction::Right,
            ..b.clone()
        };
        assert!(matches!(couple_pair(&a, &r), Err(Error::Shape(_))));
        assert!(couple_pair(&a, &a).is_err());
    }

    #[test]
    fn block_output_shape() {
        let mut rng = RngState::new(6).unwrap();
        let x: Tensor<f32> = random(&[16, 16, 4], &mut rng).cast();
        let p = RenetParams::glorot(2 * 2 * 4, 32, &mut rng).unwrap();
        let (out, _) = renet_block(&x, &p, (2, 2)).unwrap();
        assert_eq!(out.output.shape(), &[8, 8, 64]);
        assert_eq!(out.vertical.shape(), &[8, 8, 64]);
    }

    #[test]
    fn block_zero_parameters() {
        let mut rng = RngState::new(7).unwrap();
        let x = random(&[4, 4, 3], &mut rng);
        let (out, _) = renet_block(&x, &RenetParams::zeros(12, 4).unwrap(), (2, 2)).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upward_parameters_do_not_touch_downward_sweep() {
        let mut rng = RngState::new(8).unwrap();
        let x = random(&[6, 4, 2], &mut rng);
        let mut p = RenetParams::glorot(8, 3, &mut rng).unwrap();
        let (before, _) = renet_block(&x, &p, (2, 2)).unwrap();
        for v in p.up.recurrent_weights.data_mut() {
            *v += 0.25;
        }
        let (after, _) = renet_block(&x, &p, (2, 2)).unwrap();
        assert_eq!(before.sweeps[0], after.sweeps[0]);
        assert_ne!(before.sweeps[1], after.sweeps[1]);
    }

    #[test]
    fn downward_state_is_causal() {
        let mut rng = RngState::new(9).unwrap();
        let (rows, cols, k) = (4, 3, 2);
        let x = random(&[rows, cols, k], &mut rng);
        let p = random_params(k, 3, &mut rng);
        let (base, _) = directional_sweep(&x, Direction::Down, &p).unwrap();
        let (i0, j0) = (2, 1);
        for i in 0..rows {
            for j in 0..cols {
                let mut xp = x.clone();
                xp.data_mut()[(i * cols + j) * k] += 0.5;
                let (pert, _) = directional_sweep(&xp, Direction::Down, &p).unwrap();
                let cell = (i0 * cols + j0) * 3;
                let changed = pert.activations.data()[cell..cell + 3]
                    != base.activations.data()[cell..cell + 3];
                assert_eq!(changed, j == j0 && i <= i0, "perturbing ({i},{j})");
            }
        }
    }

    proptest! {
        #[test]
        fn merge_inverts_split(ph in 1usize..4, pw in 1usize..4, rows in 1usize..4, cols in 1usize..4, c in 1usize..3, seed in 1u64..1000) {
            let mut rng = RngState::new(seed).unwrap();
            let x = random(&[ph * rows, pw * cols, c], &mut rng);
            let g = split_patches(&x, pw, ph).unwrap();
            prop_assert_eq!(merge_patches(&g).unwrap(), x);
        }

        #[test]
        fn mirrored_right_equals_mirror_of_left(rows in 1usize..4, cols in 1usize..6, seed in 1u64..1000) {
            let mut rng = RngState::new(seed).unwrap();
            let x = random(&[rows, cols, 3], &mut rng);
            let p = random_params(3, 4, &mut rng);
            let (left, _) = directional_sweep(&x, Direction::Left, &p).unwrap();
            let (right, _) = directional_sweep(&x.mirror_horizontal().unwrap(), Direction::Right, &p).unwrap();
            prop_assert!(right.activations.max_abs_diff(&left.activations.mirror_horizontal().unwrap()) <= 1e-6);
        }
    }
}
