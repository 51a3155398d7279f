//! Blockwise causal attention masks over a (time x person x modality) token
//! grid, plus the strict-past and lower-triangular baselines used in
//! ablations.
//!
//! Token position `= t * (P * M) + person * M + modality`. Under the
//! blockwise mask a query may attend to every token of every *earlier*
//! timestep and to *other persons'* tokens of its own timestep. A person's
//! own current-timestep block — including the query token itself — is always
//! masked, so teacher-forced inputs for the signals being predicted cannot
//! reach the prediction through the value path.
//!
//! Masks are plain boolean matrices (`true` = attention permitted) and are
//! immutable once built; sharing one across concurrent forward passes is
//! safe.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token layout descriptor: `T` timesteps x `P` persons x `M` modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub num_segments: usize,
    pub num_persons: usize,
    pub num_modalities: usize,
}

/// Grid coordinates of one token position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenCoord {
    pub t: usize,
    pub person: usize,
    pub modality: usize,
}

impl MaskSpec {
    pub fn new(num_segments: usize, num_persons: usize, num_modalities: usize) -> Result<Self> {
        if num_segments == 0 || num_persons == 0 || num_modalities == 0 {
            return Err(Error::config("mask spec dimensions must be >= 1"));
        }
        Ok(MaskSpec {
            num_segments,
            num_persons,
            num_modalities,
        })
    }

    /// Total sequence length `L = T * P * M`.
    pub fn len(&self) -> usize {
        self.num_segments * self.num_persons * self.num_modalities
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Positions per timestep block (`P * M`).
    pub fn block_len(&self) -> usize {
        self.num_persons * self.num_modalities
    }

    pub fn position(&self, c: TokenCoord) -> usize {
        (c.t * self.num_persons + c.person) * self.num_modalities + c.modality
    }

    pub fn coord(&self, position: usize) -> TokenCoord {
        let m = self.num_modalities;
        let pm = self.block_len();
        TokenCoord {
            t: position / pm,
            person: (position % pm) / m,
            modality: position % m,
        }
    }

    fn check(&self, c: TokenCoord) -> Result<()> {
        if c.t >= self.num_segments
            || c.person >= self.num_persons
            || c.modality >= self.num_modalities
        {
            return Err(Error::config(format!(
                "token ({}, {}, {}) out of bounds for {}x{}x{}",
                c.t, c.person, c.modality, self.num_segments, self.num_persons, self.num_modalities
            )));
        }
        Ok(())
    }
}

/// Which mask family to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Past timesteps plus other persons' current timestep.
    Blockwise {
        /// Relaxation: also allow a person's own *other* modalities at the
        /// current timestep (the token itself stays masked).
        allow_own_modalities: bool,
    },
    /// Past timesteps only; isolates the value of same-timestep
    /// cross-person attention in ablations.
    StrictPast,
    /// Conventional position-ordered triangle.
    LowerTriangular { include_diagonal: bool },
}

impl MaskKind {
    pub fn blockwise() -> Self {
        MaskKind::Blockwise {
            allow_own_modalities: false,
        }
    }

    pub fn lower_triangular() -> Self {
        MaskKind::LowerTriangular {
            include_diagonal: true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskKind::Blockwise { .. } => "blockwise",
            MaskKind::StrictPast => "strict-past",
            MaskKind::LowerTriangular { .. } => "lower-triangular",
        }
    }
}

/// The blockwise rule: attend iff the key is strictly in the past, or it
/// belongs to another person at the same timestep.
pub fn mask_predicate(spec: &MaskSpec, query: TokenCoord, key: TokenCoord) -> Result<bool> {
    spec.check(query)?;
    spec.check(key)?;
    Ok(key.t < query.t || (key.t == query.t && key.person != query.person))
}

/// The relaxed blockwise rule behind `--allow-own-modalities`: additionally
/// permits a person's own other-modality tokens at the current timestep.
pub fn mask_predicate_own_modalities(
    spec: &MaskSpec,
    query: TokenCoord,
    key: TokenCoord,
) -> Result<bool> {
    spec.check(query)?;
    spec.check(key)?;
    Ok(key.t < query.t
        || (key.t == query.t
            && (key.person != query.person || key.modality != query.modality)))
}

/// Boolean allow-matrix; `allow[(q, k)] == true` means query `q` may attend
/// to key `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub spec: MaskSpec,
    pub kind: MaskKind,
    pub allow: Array2<bool>,
}

/// Default cap on mask storage; `L^2` bool cells must fit.
pub const DEFAULT_MASK_BUDGET_BYTES: usize = 1 << 30;

fn check_budget(spec: &MaskSpec, budget_bytes: usize) -> Result<()> {
    let l = spec.len();
    let need = l.checked_mul(l).ok_or_else(|| {
        Error::config("mask dimensions overflow; build the mask in chunks instead")
    })?;
    if need > budget_bytes {
        return Err(Error::config(format!(
            "mask of {l}x{l} cells exceeds the {budget_bytes}-byte budget; \
             build the mask in chunks instead"
        )));
    }
    Ok(())
}

fn build_with<F>(spec: &MaskSpec, kind: MaskKind, budget_bytes: usize, pred: F) -> Result<AttentionMask>
where
    F: Fn(TokenCoord, TokenCoord) -> bool,
{
    check_budget(spec, budget_bytes)?;
    let l = spec.len();
    let allow = Array2::from_shape_fn((l, l), |(q, k)| pred(spec.coord(q), spec.coord(k)));
    Ok(AttentionMask {
        spec: *spec,
        kind,
        allow,
    })
}

/// Builds the blockwise causal mask of the architecture.
pub fn build_blockwise_mask(spec: &MaskSpec) -> Result<AttentionMask> {
    build_blockwise_mask_with(spec, false, DEFAULT_MASK_BUDGET_BYTES)
}

pub fn build_blockwise_mask_with(
    spec: &MaskSpec,
    allow_own_modalities: bool,
    budget_bytes: usize,
) -> Result<AttentionMask> {
    let kind = MaskKind::Blockwise {
        allow_own_modalities,
    };
    if allow_own_modalities {
        build_with(spec, kind, budget_bytes, |q, k| {
            k.t < q.t || (k.t == q.t && (k.person != q.person || k.modality != q.modality))
        })
    } else {
        build_with(spec, kind, budget_bytes, |q, k| {
            k.t < q.t || (k.t == q.t && k.person != q.person)
        })
    }
}

/// Ablation baseline: strictly-past timesteps only.
pub fn build_strict_past_mask(spec: &MaskSpec) -> Result<AttentionMask> {
    build_strict_past_mask_with(spec, DEFAULT_MASK_BUDGET_BYTES)
}

pub fn build_strict_past_mask_with(spec: &MaskSpec, budget_bytes: usize) -> Result<AttentionMask> {
    build_with(spec, MaskKind::StrictPast, budget_bytes, |q, k| k.t < q.t)
}

/// Conventional lower-triangular mask over flat positions.
pub fn build_lower_triangular_mask(spec: &MaskSpec, include_diagonal: bool) -> Result<AttentionMask> {
    build_lower_triangular_mask_with(spec, include_diagonal, DEFAULT_MASK_BUDGET_BYTES)
}

pub fn build_lower_triangular_mask_with(
    spec: &MaskSpec,
    include_diagonal: bool,
    budget_bytes: usize,
) -> Result<AttentionMask> {
    check_budget(spec, budget_bytes)?;
    let l = spec.len();
    let allow = Array2::from_shape_fn((l, l), |(q, k)| {
        if include_diagonal {
            k <= q
        } else {
            k < q
        }
    });
    Ok(AttentionMask {
        spec: *spec,
        kind: MaskKind::LowerTriangular { include_diagonal },
        allow,
    })
}

pub fn build_mask(spec: &MaskSpec, kind: MaskKind) -> Result<AttentionMask> {
    match kind {
        MaskKind::Blockwise {
            allow_own_modalities,
        } => build_blockwise_mask_with(spec, allow_own_modalities, DEFAULT_MASK_BUDGET_BYTES),
        MaskKind::StrictPast => build_strict_past_mask(spec),
        MaskKind::LowerTriangular { include_diagonal } => {
            build_lower_triangular_mask(spec, include_diagonal)
        }
    }
}

impl AttentionMask {
    pub fn len(&self) -> usize {
        self.allow.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.allow.is_empty()
    }

    /// Rows with no allowed key at all (the attention kernel must emit a
    /// zero context vector for these instead of a NaN softmax).
    pub fn fully_masked_rows(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&q| self.allow.row(q).iter().all(|a| !a))
            .collect()
    }

    /// Textual dump, one row per line, `1` = allowed, `0` = blocked.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.len() * (self.len() + 1));
        for q in 0..self.len() {
            for k in 0..self.len() {
                s.push(if self.allow[(q, k)] { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Writes a plain PBM (P1) image, one pixel per cell, allowed = white,
    /// blocked = black, row 0 at the top.
    pub fn export_bitmap(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        let l = self.len();
        writeln!(f, "P1")?;
        writeln!(f, "{l} {l}")?;
        for q in 0..l {
            let row: Vec<&str> = (0..l)
                // PBM convention: 1 = black. Allowed cells render white (0).
                .map(|k| if self.allow[(q, k)] { "0" } else { "1" })
                .collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn export_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(t: usize, p: usize, m: usize) -> MaskSpec {
        MaskSpec::new(t, p, m).unwrap()
    }

    #[test]
    fn layout_is_a_bijection() {
        let s = spec(3, 2, 4);
        for pos in 0..s.len() {
            assert_eq!(s.position(s.coord(pos)), pos);
        }
    }

    #[test]
    fn predicate_cases_from_protocol() {
        let s = spec(4, 2, 4);
        let q = TokenCoord { t: 2, person: 0, modality: 0 };
        // own previous signals: allowed
        assert!(mask_predicate(&s, q, TokenCoord { t: 1, person: 0, modality: 3 }).unwrap());
        // own current signals: masked
        assert!(!mask_predicate(&s, q, TokenCoord { t: 2, person: 0, modality: 1 }).unwrap());
        // others' current signals: allowed
        assert!(mask_predicate(&s, q, TokenCoord { t: 2, person: 1, modality: 1 }).unwrap());
        // self: masked
        assert!(!mask_predicate(&s, q, q).unwrap());
        // future: masked
        assert!(!mask_predicate(&s, q, TokenCoord { t: 3, person: 1, modality: 0 }).unwrap());
    }

    #[test]
    fn predicate_rejects_out_of_bounds() {
        let s = spec(2, 2, 2);
        let q = TokenCoord { t: 0, person: 0, modality: 0 };
        assert!(mask_predicate(&s, q, TokenCoord { t: 2, person: 0, modality: 0 }).is_err());
        assert!(mask_predicate(&s, TokenCoord { t: 0, person: 5, modality: 0 }, q).is_err());
    }

    #[test]
    fn blockwise_lone_token_is_fully_masked() {
        let mask = build_blockwise_mask(&spec(1, 1, 1)).unwrap();
        assert_eq!(mask.allow, Array2::from_elem((1, 1), false));
        assert_eq!(mask.fully_masked_rows(), vec![0]);
    }

    #[test]
    fn blockwise_two_steps_one_person() {
        let mask = build_blockwise_mask(&spec(2, 1, 1)).unwrap();
        let want = ndarray::array![[false, false], [true, false]];
        assert_eq!(mask.allow, want);
    }

    #[test]
    fn blockwise_one_step_two_persons_is_pure_cross_attention() {
        let mask = build_blockwise_mask(&spec(1, 2, 1)).unwrap();
        let want = ndarray::array![[false, true], [true, false]];
        assert_eq!(mask.allow, want);
    }

    #[test]
    fn strict_past_single_step_all_false() {
        let mask = build_strict_past_mask(&spec(1, 3, 2)).unwrap();
        assert!(mask.allow.iter().all(|a| !a));
    }

    #[test]
    fn strict_past_second_block_sees_first() {
        let mask = build_strict_past_mask(&spec(2, 2, 1)).unwrap();
        for q in 2..4 {
            for k in 0..4 {
                assert_eq!(mask.allow[(q, k)], k < 2, "q={q} k={k}");
            }
        }
        for k in 0..4 {
            assert!(!mask.allow[(0, k)]);
            assert!(!mask.allow[(1, k)]);
        }
    }

    #[test]
    fn lower_triangular_patterns() {
        let mask = build_lower_triangular_mask(&spec(3, 1, 1), true).unwrap();
        let want = ndarray::array![
            [true, false, false],
            [true, true, false],
            [true, true, true]
        ];
        assert_eq!(mask.allow, want);

        let no_diag = build_lower_triangular_mask(&spec(3, 1, 1), false).unwrap();
        for q in 0..3 {
            assert!(!no_diag.allow[(q, q)]);
        }
    }

    #[test]
    fn lower_triangular_leaks_where_blockwise_blocks() {
        // On T=2, P=2, M=2 the triangle admits own-current-timestep keys at
        // earlier flat positions, which blockwise forbids.
        let s = spec(2, 2, 2);
        let tri = build_lower_triangular_mask(&s, true).unwrap();
        let blk = build_blockwise_mask(&s).unwrap();
        let mut leaked = 0;
        for q in 0..s.len() {
            for k in 0..s.len() {
                if tri.allow[(q, k)] && !blk.allow[(q, k)] {
                    let (qc, kc) = (s.coord(q), s.coord(k));
                    assert_eq!(qc.t, kc.t);
                    assert_eq!(qc.person, kc.person);
                    leaked += 1;
                }
            }
        }
        assert!(leaked > 0);
    }

    #[test]
    fn monotone_nesting() {
        let s = spec(3, 3, 2);
        let past = build_strict_past_mask(&s).unwrap();
        let blk = build_blockwise_mask(&s).unwrap();
        for q in 0..s.len() {
            for k in 0..s.len() {
                if past.allow[(q, k)] {
                    assert!(blk.allow[(q, k)]);
                }
                if blk.allow[(q, k)] {
                    let (qc, kc) = (s.coord(q), s.coord(k));
                    assert!(kc.t <= qc.t);
                }
            }
        }
    }

    #[test]
    fn own_modalities_relaxation() {
        let s = spec(1, 2, 3);
        let relaxed = build_blockwise_mask_with(&s, true, DEFAULT_MASK_BUDGET_BYTES).unwrap();
        // own other-modality allowed, self still masked
        let q = s.position(TokenCoord { t: 0, person: 0, modality: 0 });
        let own_other = s.position(TokenCoord { t: 0, person: 0, modality: 1 });
        assert!(relaxed.allow[(q, own_other)]);
        assert!(!relaxed.allow[(q, q)]);
    }

    #[test]
    fn memory_budget_guard() {
        let s = spec(100, 10, 10); // L = 10_000 -> 1e8 cells
        let err = build_blockwise_mask_with(&s, false, 1 << 20).unwrap_err();
        assert!(err.to_string().contains("chunks"));
    }

    #[test]
    fn bitmap_checkerboard() {
        let s = spec(1, 2, 1);
        let mask = build_blockwise_mask(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pbm");
        mask.export_bitmap(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "P1");
        assert_eq!(lines[1], "2 2");
        // [[F,T],[T,F]] -> blocked=1 on the diagonal
        assert_eq!(lines[2], "1 0");
        assert_eq!(lines[3], "0 1");
    }

    #[test]
    fn bitmap_paper_dimensions() {
        let s = spec(12, 3, 6);
        let mask = build_blockwise_mask(&s).unwrap();
        assert_eq!(mask.len(), 216);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pbm");
        mask.export_bitmap(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "216 216");
    }

    #[test]
    fn all_false_mask_is_all_black() {
        let s = spec(1, 1, 2);
        let mut mask = build_blockwise_mask_with(&s, false, DEFAULT_MASK_BUDGET_BYTES).unwrap();
        mask.allow.fill(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pbm");
        mask.export_bitmap(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines().skip(2) {
            for tok in line.split_whitespace() {
                assert_eq!(tok, "1");
            }
        }
    }

    #[test]
    fn text_dump_roundtrips_pattern() {
        let s = spec(2, 2, 1);
        let mask = build_blockwise_mask(&s).unwrap();
        let text = mask.to_text();
        for (q, line) in text.lines().enumerate() {
            for (k, ch) in line.chars().enumerate() {
                assert_eq!(ch == '1', mask.allow[(q, k)]);
            }
        }
    }
}
