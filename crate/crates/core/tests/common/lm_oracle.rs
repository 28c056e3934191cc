//! Interpolated trigram probability recomputed by scanning raw sentences.
#![allow(dead_code)]

pub struct Oracle {
    events: Vec<Vec<String>>,
    weights: [f64; 3],
}

impl Oracle {
    pub fn new(corpus: &[String], weights: [f64; 3]) -> Self {
        let events = corpus
            .iter()
            .map(|s| {
                let mut v = vec!["<s>".to_string(), "<s>".to_string()];
                v.extend(s.split_whitespace().map(String::from));
                v.push("</s>".to_string());
                v
            })
            .collect();
        Oracle { events, weights }
    }

    // Occurrences of `ctx` followed by `w` (or by anything), predicted
    // positions only.
    fn count(&self, ctx: &[&str], w: Option<&str>) -> usize {
        let mut n = 0;
        for s in &self.events {
            for i in 2..s.len() {
                let k = ctx.len();
                let hist_ok = (0..k).all(|j| s[i - k + j] == ctx[j]);
                if hist_ok && w.is_none_or(|w| s[i] == w) {
                    n += 1;
                }
            }
        }
        n
    }

    pub fn types(&self) -> usize {
        let mut seen: Vec<&str> = self.events.iter().flat_map(|s| s[2..].iter().map(String::as_str)).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        let total = self.count(&[], None);
        let p1 = (self.count(&[], Some(w)) + 1) as f64 / (total + self.types() + 1) as f64;
        let h2 = self.count(&[v], None);
        let p2 = if h2 == 0 { p1 } else { self.count(&[v], Some(w)) as f64 / h2 as f64 };
        let h3 = self.count(&[u, v], None);
        let p3 = if h3 == 0 { p2 } else { self.count(&[u, v], Some(w)) as f64 / h3 as f64 };
        let [l3, l2, l1] = self.weights;
        l3 * p3 + l2 * p2 + l1 * p1
    }
}
