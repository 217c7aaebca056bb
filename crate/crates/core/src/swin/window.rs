use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Var};

/// Windows cut from a token grid, together with what is needed to put them
/// back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSet {
    /// `(batch * num_windows, window * window, D)`
    pub windows: Var,
    pub batch: usize,
    pub grid: (usize, usize),
    pub window: usize,
}

impl WindowSet {
    pub fn num_windows(&self) -> usize {
        (self.grid.0 / self.window) * (self.grid.1 / self.window)
    }
}

fn grid_dims<T: Scalar>(tape: &Tape<T>, x: Var, op: &'static str) -> Result<[usize; 4]> {
    let s = tape.shape(x);
    match s.as_slice() {
        &[b, gh, gw, d] => Ok([b, gh, gw, d]),
        _ => Err(Error::invalid(
            op,
            format!("expected a (batch, Gh, Gw, D) token grid, got {s:?}"),
        )),
    }
}

/// Splits the grid into non-overlapping `w x w` windows in row-major window
/// order; tokens inside each window are row-major too.
pub fn window_partition<T: Scalar>(tape: &Tape<T>, x: Var, w: usize) -> Result<WindowSet> {
    let [b, gh, gw, d] = grid_dims(tape, x, "window_partition")?;
    if w == 0 || gh % w != 0 || gw % w != 0 {
        return Err(Error::invalid(
            "window_partition",
            format!("grid {gh}x{gw} is not divisible by window size {w}"),
        ));
    }
    let v = tape.reshape(x, &[b, gh / w, w, gw / w, w, d])?;
    let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
    let windows = tape.reshape(v, &[b * (gh / w) * (gw / w), w * w, d])?;
    Ok(WindowSet {
        windows,
        batch: b,
        grid: (gh, gw),
        window: w,
    })
}

/// Inverse of [`window_partition`]. `windows` may be any value with the
/// layout of `ws.windows` (e.g. the attention output).
pub fn window_reverse<T: Scalar>(tape: &Tape<T>, ws: &WindowSet, windows: Var) -> Result<Var> {
    let (gh, gw) = ws.grid;
    let w = ws.window;
    let d = *tape.shape(windows).last().expect("rank 3");
    let v = tape.reshape(windows, &[ws.batch, gh / w, gw / w, w, w, d])?;
    let v = tape.permute(v, &[0, 1, 3, 2, 4, 5])?;
    tape.reshape(v, &[ws.batch, gh, gw, d])
}

/// Rolls both spatial axes by `-s`: `out[i][j] = in[(i + s) % Gh][(j + s) % Gw]`.
pub fn cyclic_shift<T: Scalar>(tape: &Tape<T>, x: Var, s: usize) -> Result<Var> {
    grid_dims(tape, x, "cyclic_shift")?;
    let v = tape.roll(x, 1, s)?;
    tape.roll(v, 2, s)
}

/// Inverse of [`cyclic_shift`].
pub fn cyclic_unshift<T: Scalar>(tape: &Tape<T>, x: Var, s: usize) -> Result<Var> {
    let [_, gh, gw, _] = grid_dims(tape, x, "cyclic_unshift")?;
    let v = tape.roll(x, 1, gh - s % gh)?;
    tape.roll(v, 2, gw - s % gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn four_by_four_grid_into_two_by_two_windows() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 4, 4, 1], |i| i as f64));
        let ws = window_partition(&tape, x, 2).unwrap();
        let v = tape.value(ws.windows);
        assert_eq!(v.shape(), &[4, 4, 1]);
        // index-arithmetic oracle: window (wr, wc), token (r, c) -> grid (2wr + r, 2wc + c)
        for wr in 0..2 {
            for wc in 0..2 {
                for r in 0..2 {
                    for c in 0..2 {
                        let expect = ((2 * wr + r) * 4 + 2 * wc + c) as f64;
                        assert_eq!(v.get(&[wr * 2 + wc, r * 2 + c, 0]), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn whole_grid_window_is_row_major() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 3, 2], |i| i as f64));
        let ws = window_partition(&tape, x, 3).unwrap();
        let v = tape.value(ws.windows);
        assert_eq!(v.shape(), &[1, 9, 2]);
        assert_eq!(v.data(), tape.value(x).data());
    }

    #[test]
    fn indivisible_grid_is_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 6, 4, 1]));
        let msg = window_partition(&tape, x, 4).unwrap_err().to_string();
        assert!(msg.contains("6x4") && msg.contains('4'), "{msg}");
    }

    #[test]
    fn shift_two_by_two() {
        let tape = Tape::<f64>::new();
        // [[a, b], [c, d]] with a..d = 1..4
        let x = tape.constant(Tensor::new(&[1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap());
        let y = cyclic_shift(&tape, x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[4., 3., 2., 1.]);
        let z = cyclic_shift(&tape, x, 0).unwrap();
        assert_eq!(tape.value(z).data(), tape.value(x).data());
    }

    #[test]
    fn shift_matches_modular_oracle_and_inverts() {
        let tape = Tape::<f64>::new();
        let (gh, gw) = (4, 6);
        let x = tape.constant(Tensor::from_fn(&[2, gh, gw, 3], |i| (i as f64).sin()));
        let xv = tape.value(x);
        for s in 0..4 {
            let y = cyclic_shift(&tape, x, s).unwrap();
            let yv = tape.value(y);
            for b in 0..2 {
                for i in 0..gh {
                    for j in 0..gw {
                        for c in 0..3 {
                            assert_eq!(yv.get(&[b, i, j, c]), xv.get(&[b, (i + s) % gh, (j + s) % gw, c]));
                        }
                    }
                }
            }
            let back = cyclic_unshift(&tape, y, s).unwrap();
            assert_eq!(*tape.value(back), *xv);
        }
    }
}
