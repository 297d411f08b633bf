use serde::{Deserialize, Serialize};

/// Position and shape of one tensor inside the flat parameter buffer.
/// Biases have `cols == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor layout for data length `n`, parameter dimension `p`, hidden width
/// and number of residual layers.
///
/// Buffer order: `W1 b1 E bE Q1 bQ1 P1 bP1`, then per layer
/// `W bW Q bQ P bP`, then `Wf bf`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n: usize,
    pub p: usize,
    pub hidden: usize,
    pub layers: usize,
    pub w1: Slot,
    pub b1: Slot,
    pub e: Slot,
    pub be: Slot,
    /// `q[0]` embeds `w` (hidden x n); `q[i]` for `i >= 1` are hidden x hidden.
    pub q: Vec<Slot>,
    pub bq: Vec<Slot>,
    /// `sp[0]` follows the scalar embedding `E`; all are hidden x hidden.
    pub sp: Vec<Slot>,
    pub bsp: Vec<Slot>,
    /// Residual matrices, one per layer.
    pub w: Vec<Slot>,
    pub bw: Vec<Slot>,
    pub wf: Slot,
    pub bf: Slot,
    slots: Vec<Slot>,
    total: usize,
}

struct Builder {
    offset: usize,
    slots: Vec<Slot>,
}

impl Builder {
    fn take(&mut self, rows: usize, cols: usize) -> Slot {
        let s = Slot {
            offset: self.offset,
            rows,
            cols,
        };
        self.offset += s.len();
        self.slots.push(s);
        s
    }
}

impl Layout {
    pub fn new(n: usize, p: usize, hidden: usize, layers: usize) -> Self {
        let h = hidden;
        let mut b = Builder {
            offset: 0,
            slots: Vec::new(),
        };
        let w1 = b.take(h, n);
        let b1 = b.take(h, 0);
        let e = b.take(h, 1);
        let be = b.take(h, 0);
        let mut q = vec![b.take(h, n)];
        let mut bq = vec![b.take(h, 0)];
        let mut pp = vec![b.take(h, h)];
        let mut bp = vec![b.take(h, 0)];
        let mut w = Vec::with_capacity(layers);
        let mut bw = Vec::with_capacity(layers);
        for _ in 0..layers {
            w.push(b.take(h, h));
            bw.push(b.take(h, 0));
            q.push(b.take(h, h));
            bq.push(b.take(h, 0));
            pp.push(b.take(h, h));
            bp.push(b.take(h, 0));
        }
        let wf = b.take(p, h);
        let bf = b.take(p, 0);
        Self {
            n,
            p,
            hidden,
            layers,
            w1,
            b1,
            e,
            be,
            q,
            bq,
            sp: pp,
            bsp: bp,
            w,
            bw,
            wf,
            bf,
            total: b.offset,
            slots: b.slots,
        }
    }

    /// All slots in buffer order.
    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_tile_the_buffer() {
        let l = Layout::new(8, 2, 4, 3);
        let mut end = 0;
        for s in l.slots() {
            assert_eq!(s.offset, end);
            end += s.len();
        }
        assert_eq!(end, l.len());
        let h = 4;
        let expected = (h * 8 + h) + 2 * h + (h * 8 + h) + (h * h + h) + 3 * 3 * (h * h + h) + (2 * h + 2);
        assert_eq!(l.len(), expected);
    }
}
