//! Dense row-major f32 tiles.
//!
//! Every reduction walks indices in ascending order so results are
//! bit-reproducible for a fixed program and input.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape {shape:?} needs {expected} elements, got {got}")]
pub struct ShapeError {
    pub shape: Vec<usize>,
    pub expected: usize,
    pub got: usize,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Numpy-style broadcast of equal-rank shapes (extent 1 stretches).
pub fn broadcast_shapes(shapes: &[&[usize]]) -> Option<Vec<usize>> {
    let rank = shapes.first()?.len();
    if shapes.iter().any(|s| s.len() != rank) {
        return None;
    }
    let mut out = vec![1; rank];
    for s in shapes {
        for (o, &d) in out.iter_mut().zip(s.iter()) {
            if *o == 1 {
                *o = d;
            } else if d != 1 && d != *o {
                return None;
            }
        }
    }
    Some(out)
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ShapeError> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(ShapeError {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// Tile of rank `shape.len()` whose entries are their index along `axis`.
    pub fn iota(shape: &[usize], axis: usize) -> Self {
        let st = strides(shape);
        let data = (0..numel(shape))
            .map(|i| ((i / st[axis]) % shape[axis]) as f32)
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Seeded uniform samples in `[-1, 1)`.
    pub fn random_uniform<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| rng.random_range(-1.0f32..1.0f32))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(&self, shape: &[usize]) -> Option<Tensor> {
        (numel(shape) == self.numel()).then(|| Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Element of a broadcast operand at the flat output index `i`.
    fn bcast_get(&self, out_shape: &[usize], out_strides: &[usize], i: usize) -> f32 {
        if self.data.len() == 1 {
            return self.data[0];
        }
        let own = strides(&self.shape);
        let mut flat = 0;
        for d in 0..out_shape.len() {
            let idx = (i / out_strides[d]) % out_shape[d];
            if self.shape[d] != 1 {
                flat += idx * own[d];
            }
        }
        self.data[flat]
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Option<Tensor> {
        let shape = broadcast_shapes(&[&self.shape, &other.shape])?;
        let st = strides(&shape);
        let data = (0..numel(&shape))
            .map(|i| f(self.bcast_get(&shape, &st, i), other.bcast_get(&shape, &st, i)))
            .collect();
        Some(Tensor { shape, data })
    }

    /// Elementwise `cond != 0 ? a : b` with broadcasting.
    pub fn select(cond: &Tensor, a: &Tensor, b: &Tensor) -> Option<Tensor> {
        let shape = broadcast_shapes(&[&cond.shape, &a.shape, &b.shape])?;
        let st = strides(&shape);
        let data = (0..numel(&shape))
            .map(|i| {
                if cond.bcast_get(&shape, &st, i) != 0.0 {
                    a.bcast_get(&shape, &st, i)
                } else {
                    b.bcast_get(&shape, &st, i)
                }
            })
            .collect();
        Some(Tensor { shape, data })
    }

    /// `acc + a · b` for 2-D operands, reducing over `k` in ascending order.
    pub fn matmul_acc(a: &Tensor, b: &Tensor, acc: &Tensor) -> Option<Tensor> {
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return None;
        };
        if k != k2 || acc.shape() != [m, n] {
            return None;
        }
        let mut out = acc.data.clone();
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for kk in 0..k {
                    s += a.data[i * k + kk] * b.data[kk * n + j];
                }
                out[i * n + j] += s;
            }
        }
        Some(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose2d(&self) -> Option<Tensor> {
        let &[r, c] = self.shape() else {
            return None;
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Some(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    /// Reduces along `axis`, keeping it with extent 1.
    pub fn reduce(&self, axis: usize, init: f32, f: impl Fn(f32, f32) -> f32) -> Option<Tensor> {
        if axis >= self.rank() {
            return None;
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        let in_st = strides(&self.shape);
        let out_st = strides(&shape);
        let mut data = vec![init; numel(&shape)];
        for (o, slot) in data.iter_mut().enumerate() {
            let mut base = 0;
            for d in 0..shape.len() {
                base += ((o / out_st[d]) % shape[d]) * in_st[d];
            }
            let mut acc = init;
            for j in 0..self.shape[axis] {
                acc = f(acc, self.data[base + j * in_st[axis]]);
            }
            *slot = acc;
        }
        Some(Tensor { shape, data })
    }

    /// Concatenates 2-D tiles along `axis` (0 = rows, 1 = columns).
    pub fn concat2d(parts: &[&Tensor], axis: usize) -> Option<Tensor> {
        let first = parts.first()?;
        if first.rank() != 2 || parts.iter().any(|p| p.rank() != 2) {
            return None;
        }
        let other = 1 - axis;
        if parts.iter().any(|p| p.shape[other] != first.shape[other]) {
            return None;
        }
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let mut out = Tensor::zeros(&shape);
        let mut offset = 0;
        for p in parts {
            for i in 0..p.shape[0] {
                for j in 0..p.shape[1] {
                    let (oi, oj) = if axis == 0 { (i + offset, j) } else { (i, j + offset) };
                    out.data[oi * shape[1] + oj] = p.data[i * p.shape[1] + j];
                }
            }
            offset += p.shape[axis];
        }
        Some(out)
    }

    /// Reads a `shape` window at `offsets`; elements outside the tensor read as 0.
    /// Returns the window and the flat indices of in-bounds source elements.
    pub fn read_window(&self, offsets: &[i64], shape: &[usize]) -> (Tensor, Vec<usize>) {
        let mut out = Tensor::zeros(shape);
        let mut touched = Vec::new();
        let src_st = strides(&self.shape);
        let st = strides(shape);
        for i in 0..out.numel() {
            if let Some(flat) = self.window_index(offsets, shape, &st, &src_st, i) {
                out.data[i] = self.data[flat];
                touched.push(flat);
            }
        }
        (out, touched)
    }

    /// Writes `tile` at `offsets`, dropping out-of-bounds elements. Returns the
    /// flat indices written.
    pub fn write_window(&mut self, offsets: &[i64], tile: &Tensor) -> Vec<usize> {
        let src_st = strides(&self.shape);
        let st = strides(&tile.shape);
        let mut touched = Vec::new();
        for i in 0..tile.numel() {
            if let Some(flat) = self.window_index(offsets, &tile.shape, &st, &src_st, i) {
                self.data[flat] = tile.data[i];
                touched.push(flat);
            }
        }
        touched
    }

    fn window_index(
        &self,
        offsets: &[i64],
        shape: &[usize],
        st: &[usize],
        src_st: &[usize],
        i: usize,
    ) -> Option<usize> {
        let mut flat = 0usize;
        for d in 0..shape.len() {
            let idx = offsets[d] + ((i / st[d]) % shape[d]) as i64;
            if idx < 0 || idx >= self.shape[d] as i64 {
                return None;
            }
            flat += idx as usize * src_st[d];
        }
        Some(flat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[&[4, 1], &[4, 8]]), Some(vec![4, 8]));
        assert_eq!(broadcast_shapes(&[&[1, 8], &[4, 1]]), Some(vec![4, 8]));
        assert_eq!(broadcast_shapes(&[&[4, 2], &[4, 8]]), None);
        assert_eq!(broadcast_shapes(&[&[4], &[4, 8]]), None);
    }

    #[test]
    fn matmul_identity() {
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(Tensor::matmul_acc(&id, &m, &z).unwrap(), m);
    }

    #[test]
    fn reduce_keeps_axis() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = t.reduce(1, 0.0, |a, b| a + b).unwrap();
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data(), &[6.0, 15.0]);
        let s0 = t.reduce(0, 0.0, |a, b| a + b).unwrap();
        assert_eq!(s0.data(), &[5.0, 7.0, 9.0]);
    }

    #[test]
    fn window_zero_fills_out_of_bounds() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (w, touched) = t.read_window(&[2], &[4]);
        assert_eq!(w.data(), &[3.0, 4.0, 0.0, 0.0]);
        assert_eq!(touched, vec![2, 3]);
        let (w, _) = t.read_window(&[-1], &[2]);
        assert_eq!(w.data(), &[0.0, 1.0]);
    }

    #[test]
    fn iota_and_transpose() {
        let r = Tensor::iota(&[2, 3], 0);
        assert_eq!(r.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = Tensor::iota(&[2, 3], 1);
        assert_eq!(c.transpose2d().unwrap().data(), &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
