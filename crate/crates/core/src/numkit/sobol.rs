use crate::error::{CoreError, Result};

/// Largest supported dimension.
pub const SOBOL_MAX_DIM: usize = 64;

const BITS: usize = 32;

/// Primitive polynomials (with leading and trailing terms as bits) and
/// initial direction numbers for dimensions 2..=64, from Joe & Kuo's
/// new-joe-kuo-6.21201 table. Dimension 1 is the van der Corput sequence.
const DIRECTION_TABLE: [(u32, &[u32]); SOBOL_MAX_DIM - 1] = [
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
    (333, &[1, 3, 1, 11, 27, 43, 71, 9]),
    (351, &[1, 1, 7, 15, 21, 11, 81, 45]),
    (355, &[1, 3, 7, 3, 25, 31, 65, 79]),
    (357, &[1, 3, 1, 1, 19, 11, 3, 205]),
    (361, &[1, 1, 5, 9, 19, 21, 29, 157]),
    (369, &[1, 3, 7, 11, 1, 33, 89, 185]),
    (391, &[1, 3, 3, 3, 15, 9, 79, 71]),
    (397, &[1, 3, 7, 11, 15, 39, 119, 27]),
    (425, &[1, 1, 3, 1, 11, 31, 97, 225]),
    (451, &[1, 1, 1, 3, 23, 43, 57, 177]),
    (463, &[1, 3, 7, 7, 17, 17, 37, 71]),
    (487, &[1, 3, 1, 5, 27, 63, 123, 213]),
    (501, &[1, 1, 3, 5, 11, 43, 53, 133]),
    (529, &[1, 3, 5, 5, 29, 17, 47, 173, 479]),
    (539, &[1, 3, 3, 11, 3, 1, 109, 9, 69]),
    (545, &[1, 1, 1, 5, 17, 39, 23, 5, 343]),
    (557, &[1, 3, 1, 5, 25, 15, 31, 103, 499]),
    (563, &[1, 1, 1, 11, 11, 17, 63, 105, 183]),
    (601, &[1, 1, 5, 11, 9, 29, 97, 231, 363]),
    (607, &[1, 1, 5, 15, 19, 45, 41, 7, 383]),
    (617, &[1, 3, 7, 7, 31, 19, 83, 137, 221]),
    (623, &[1, 1, 1, 3, 23, 15, 111, 223, 83]),
    (631, &[1, 1, 5, 13, 31, 15, 55, 25, 161]),
    (637, &[1, 1, 3, 13, 25, 47, 39, 87, 257]),
];

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (b, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - b);
        }
        return v;
    }
    let (poly, m) = DIRECTION_TABLE[dim - 1];
    let s = m.len();
    for i in 0..s.min(BITS) {
        v[i] = m[i] << (BITS - 1 - i);
    }
    for i in s..BITS {
        let mut x = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (poly >> (s - k)) & 1 == 1 {
                x ^= v[i - k];
            }
        }
        v[i] = x;
    }
    v
}

/// `n` points of the unscrambled Sobol sequence in `[0, 1)^dim`, starting
/// at sequence index `skip` (index 0 is the origin).
pub fn sobol(dim: usize, n: usize, skip: usize) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || dim > SOBOL_MAX_DIM {
        return Err(CoreError::Config(format!(
            "Sobol dimension {dim} outside 1..={SOBOL_MAX_DIM}"
        )));
    }
    if n == 0 {
        return Err(CoreError::Config("Sobol point count must be positive".into()));
    }
    if (skip as u64) + (n as u64) > (1u64 << BITS) {
        return Err(CoreError::Config("Sobol index exceeds 2^32".into()));
    }
    let dirs: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
    let scale = 1.0 / (1u64 << BITS) as f64;
    let mut out = Vec::with_capacity(n);
    for index in skip..skip + n {
        let gray = (index ^ (index >> 1)) as u64;
        let point = dirs
            .iter()
            .map(|v| {
                let mut x = 0u32;
                for (b, d) in v.iter().enumerate() {
                    if (gray >> b) & 1 == 1 {
                        x ^= d;
                    }
                }
                f64::from(x) * scale
            })
            .collect();
        out.push(point);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;

    #[test]
    fn matches_reference_prefix() {
        let pts = sobol(5, 8, 0).unwrap();
        let expected = [
            [0.0, 0.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.5, 0.5],
            [0.75, 0.25, 0.25, 0.25, 0.75],
            [0.25, 0.75, 0.75, 0.75, 0.25],
            [0.375, 0.375, 0.625, 0.875, 0.375],
            [0.875, 0.875, 0.125, 0.375, 0.875],
            [0.625, 0.125, 0.875, 0.625, 0.625],
            [0.125, 0.625, 0.375, 0.125, 0.125],
        ];
        for (p, e) in pts.iter().zip(expected.iter()) {
            assert_eq!(p.as_slice(), e.as_slice());
        }
    }

    #[test]
    fn high_dimensions_match_reference_values() {
        // values from an independent Joe-Kuo implementation
        let pts = sobol(64, 1024, 0).unwrap();
        let p = &pts[1000];
        let picks = [(0, 225.0), (1, 99.0), (2, 531.0), (10, 87.0), (33, 607.0), (63, 457.0)];
        for (d, num) in picks {
            assert_eq!(p[d], num / 1024.0, "dim {d}");
        }
        let q = &pts[37];
        assert_eq!([q[5], q[20], q[40], q[62]], [0.296875, 0.953125, 0.078125, 0.640625]);
        let total: f64 = pts.iter().flatten().sum();
        assert_eq!(total, 32736.0);
    }

    #[test]
    fn skip_offsets_sequence() {
        let all = sobol(3, 10, 0).unwrap();
        let tail = sobol(3, 5, 5).unwrap();
        assert_eq!(&all[5..], tail.as_slice());
    }

    #[test]
    fn range_distinctness_and_errors() {
        let pts = sobol(2, 64, 1).unwrap();
        assert!(pts.iter().flatten().all(|&x| (0.0..1.0).contains(&x)));
        for i in 0..pts.len() {
            for j in 0..i {
                assert_ne!(pts[i], pts[j]);
            }
        }
        assert!(sobol(65, 1, 0).is_err());
        assert!(sobol(0, 1, 0).is_err());
    }

    /// Star discrepancy estimated over anchored boxes with corners on a
    /// 64x64 grid.
    fn grid_star_discrepancy(points: &[Vec<f64>]) -> f64 {
        let n = points.len() as f64;
        let mut worst = 0.0f64;
        for a in 1..=64 {
            for b in 1..=64 {
                let (x, y) = (a as f64 / 64.0, b as f64 / 64.0);
                let inside = points.iter().filter(|p| p[0] < x && p[1] < y).count() as f64;
                worst = worst.max((inside / n - x * y).abs());
            }
        }
        worst
    }

    #[test]
    fn lower_discrepancy_than_uniform_random() {
        let sob = grid_star_discrepancy(&sobol(2, 64, 0).unwrap());
        let mut random_mean = 0.0;
        for seed in 0..20 {
            let mut rng = SeededRng::new(seed, 0);
            let pts: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
            random_mean += grid_star_discrepancy(&pts) / 20.0;
        }
        assert!(sob < random_mean, "sobol {sob} vs random {random_mean}");
    }
}
