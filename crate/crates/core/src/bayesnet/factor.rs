//! Dense discrete factors for variable elimination.
//!
//! A factor holds a nonnegative table over a sorted set of node ids. Tables
//! are row-major with the first variable slowest. Networks here are small
//! (tens of nodes, few levels), so dense tables and index arithmetic are all
//! that is needed.

/// A function from joint assignments of `vars` to nonnegative reals.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    /// Node ids, strictly ascending.
    pub vars: Vec<usize>,
    /// Cardinality of each var, aligned with `vars`.
    pub card: Vec<usize>,
    pub data: Vec<f64>,
}

impl Factor {
    pub fn scalar(value: f64) -> Factor {
        Factor {
            vars: vec![],
            card: vec![],
            data: vec![value],
        }
    }

    /// Decode flat index into per-var levels (first var slowest).
    fn decode(&self, mut idx: usize, out: &mut [usize]) {
        for pos in (0..self.vars.len()).rev() {
            out[pos] = idx % self.card[pos];
            idx /= self.card[pos];
        }
    }

    /// Pointwise product over the union of scopes.
    pub fn multiply(&self, other: &Factor) -> Factor {
        let mut vars: Vec<usize> = self.vars.clone();
        let mut card: Vec<usize> = self.card.clone();
        for (i, v) in other.vars.iter().enumerate() {
            if let Err(pos) = vars.binary_search(v) {
                vars.insert(pos, *v);
                card.insert(pos, other.card[i]);
            }
        }
        let size = card.iter().product::<usize>().max(1);
        // Positions of each operand's vars within the result scope.
        let map_a: Vec<usize> = self
            .vars
            .iter()
            .map(|v| vars.binary_search(v).unwrap())
            .collect();
        let map_b: Vec<usize> = other
            .vars
            .iter()
            .map(|v| vars.binary_search(v).unwrap())
            .collect();

        let mut data = vec![0.0; size];
        let mut levels = vec![0usize; vars.len()];
        let result = Factor {
            vars,
            card,
            data: vec![],
        };
        for (idx, slot) in data.iter_mut().enumerate() {
            result.decode(idx, &mut levels);
            let ia = flat_index(&map_a, &self.card, &levels);
            let ib = flat_index(&map_b, &other.card, &levels);
            *slot = self.data[ia] * other.data[ib];
        }
        Factor { data, ..result }
    }

    /// Sum out one variable.
    pub fn marginalize(&self, var: usize) -> Factor {
        let pos = match self.vars.binary_search(&var) {
            Ok(p) => p,
            Err(_) => return self.clone(),
        };
        let mut vars = self.vars.clone();
        let mut card = self.card.clone();
        let k = card.remove(pos);
        vars.remove(pos);
        let size = card.iter().product::<usize>().max(1);
        let mut data = vec![0.0; size];
        let result = Factor {
            vars,
            card,
            data: vec![],
        };
        let mut levels = vec![0usize; result.vars.len()];
        for (idx, slot) in data.iter_mut().enumerate() {
            result.decode(idx, &mut levels);
            let mut acc = 0.0;
            for l in 0..k {
                let mut full_idx = 0usize;
                let mut pos_out = 0usize;
                for p in 0..self.vars.len() {
                    let lev = if p == pos {
                        l
                    } else {
                        let lev = levels[pos_out];
                        pos_out += 1;
                        lev
                    };
                    full_idx = full_idx * self.card[p] + lev;
                }
                acc += self.data[full_idx];
            }
            *slot = acc;
        }
        Factor { data, ..result }
    }
}

/// Flat index of `levels` (over the result scope) into a table whose vars sit
/// at `positions` of the result scope.
fn flat_index(positions: &[usize], card: &[usize], levels: &[usize]) -> usize {
    let mut idx = 0usize;
    for (p, &pos) in positions.iter().enumerate() {
        idx = idx * card[p] + levels[pos];
    }
    idx
}
