use std::fmt::Write as _;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which gallery entries a query may not be matched against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    /// Every gallery entry counts.
    #[default]
    None,
    /// Drop gallery entries sharing both identity and camera with the query.
    SameIdSameCam,
}

impl std::str::FromStr for Exclusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "same_id_same_cam" | "same-id-same-cam" => Ok(Self::SameIdSameCam),
            _ => Err(Error::InvalidArgument(format!("unknown exclusion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRanking {
    pub query: usize,
    pub identity: u32,
    /// Valid gallery indices, nearest first, ties by index.
    pub ranked: Vec<usize>,
    /// 1-based rank of the first correct match.
    pub first_match: Option<usize>,
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmcResult {
    /// `cmc[k]` is the rank-`(k+1)` accuracy; length is the gallery size.
    pub cmc: Vec<f64>,
    pub evaluated: usize,
    /// Queries without any valid positive, left out of the denominator.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapResult {
    pub map: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub cmc: Vec<f64>,
    pub map: f64,
    pub evaluated: usize,
    pub skipped: usize,
    pub queries: Vec<QueryRanking>,
}

struct Labels<'a> {
    q_labels: &'a [u32],
    g_labels: &'a [u32],
    q_cams: &'a [u32],
    g_cams: &'a [u32],
}

fn check(distmat: &ArrayView2<f64>, l: &Labels) -> Result<()> {
    let (q, n) = distmat.dim();
    if l.q_labels.len() != q || l.q_cams.len() != q {
        return Err(Error::Shape(format!(
            "{q} query rows but {} labels and {} cameras",
            l.q_labels.len(),
            l.q_cams.len()
        )));
    }
    if l.g_labels.len() != n || l.g_cams.len() != n {
        return Err(Error::Shape(format!(
            "{n} gallery columns but {} labels and {} cameras",
            l.g_labels.len(),
            l.g_cams.len()
        )));
    }
    if n == 0 {
        return Err(Error::Evaluation("empty gallery".into()));
    }
    if distmat.iter().any(|d| !d.is_finite()) {
        return Err(Error::Evaluation("distance matrix has non-finite entries".into()));
    }
    Ok(())
}

fn rank_query(distmat: &ArrayView2<f64>, l: &Labels, qi: usize, exclusion: Exclusion) -> QueryRanking {
    let row = distmat.row(qi);
    let (id, cam) = (l.q_labels[qi], l.q_cams[qi]);
    let mut ranked: Vec<usize> = (0..row.len())
        .filter(|&g| match exclusion {
            Exclusion::None => true,
            Exclusion::SameIdSameCam => !(l.g_labels[g] == id && l.g_cams[g] == cam),
        })
        .collect();
    ranked.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    let mut first_match = None;
    for (pos, &g) in ranked.iter().enumerate() {
        if l.g_labels[g] == id {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
            first_match.get_or_insert(pos + 1);
        }
    }
    QueryRanking {
        query: qi,
        identity: id,
        ranked,
        first_match,
        average_precision: (hits > 0).then(|| precision_sum / hits as f64),
    }
}

/// Ranks every query and aggregates CMC and mAP.
pub fn evaluate(
    distmat: ArrayView2<f64>,
    q_labels: &[u32],
    g_labels: &[u32],
    q_cams: &[u32],
    g_cams: &[u32],
    exclusion: Exclusion,
) -> Result<RankingReport> {
    let labels = Labels {
        q_labels,
        g_labels,
        q_cams,
        g_cams,
    };
    check(&distmat, &labels)?;
    let n = distmat.ncols();
    let queries: Vec<QueryRanking> = (0..distmat.nrows())
        .map(|qi| rank_query(&distmat, &labels, qi, exclusion))
        .collect();
    let mut cmc = vec![0.0; n];
    let mut ap_sum = 0.0;
    let mut evaluated = 0;
    for q in &queries {
        if let (Some(first), Some(ap)) = (q.first_match, q.average_precision) {
            evaluated += 1;
            ap_sum += ap;
            for v in &mut cmc[first - 1..] {
                *v += 1.0;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::Evaluation("no query has a valid positive in the gallery".into()));
    }
    for v in &mut cmc {
        *v /= evaluated as f64;
    }
    Ok(RankingReport {
        cmc,
        map: ap_sum / evaluated as f64,
        evaluated,
        skipped: queries.len() - evaluated,
        queries,
    })
}

pub fn compute_cmc(
    distmat: ArrayView2<f64>,
    q_labels: &[u32],
    g_labels: &[u32],
    q_cams: &[u32],
    g_cams: &[u32],
    exclusion: Exclusion,
) -> Result<CmcResult> {
    let r = evaluate(distmat, q_labels, g_labels, q_cams, g_cams, exclusion)?;
    Ok(CmcResult {
        cmc: r.cmc,
        evaluated: r.evaluated,
        skipped: r.skipped,
    })
}

pub fn compute_map(
    distmat: ArrayView2<f64>,
    q_labels: &[u32],
    g_labels: &[u32],
    q_cams: &[u32],
    g_cams: &[u32],
    exclusion: Exclusion,
) -> Result<MapResult> {
    let r = evaluate(distmat, q_labels, g_labels, q_cams, g_cams, exclusion)?;
    Ok(MapResult {
        map: r.map,
        evaluated: r.evaluated,
        skipped: r.skipped,
    })
}

impl RankingReport {
    /// Rank-`k` accuracy (1-based); saturates past the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-based");
        self.cmc[(k - 1).min(self.cmc.len() - 1)]
    }

    pub const SUMMARY_HEADER: &'static str = "rank1,rank5,rank10,map,queries,skipped";

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.rank(1),
            self.rank(5),
            self.rank(10),
            self.map,
            self.evaluated,
            self.skipped
        )
    }

    pub fn summary_text(&self) -> String {
        format!(
            "r = 1: {:.2}%  r = 5: {:.2}%  r = 10: {:.2}%  mAP: {:.2}%  ({} queries, {} without a valid positive)",
            100.0 * self.rank(1),
            100.0 * self.rank(5),
            100.0 * self.rank(10),
            100.0 * self.map,
            self.evaluated,
            self.skipped
        )
    }

    /// Writes `summary.csv`, `cmc.csv` and `queries.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write(
            "summary.csv",
            format!("# scpnet ranking summary v1\n{}\n{}\n", Self::SUMMARY_HEADER, self.summary_row()),
        )?;
        let mut cmc = String::from("# scpnet cmc v1\nrank,accuracy\n");
        for (k, v) in self.cmc.iter().enumerate() {
            writeln!(cmc, "{},{v}", k + 1).unwrap();
        }
        write("cmc.csv", cmc)?;
        let mut q = String::from("# scpnet query rankings v1\nquery,identity,first_match,average_precision,top10\n");
        for r in &self.queries {
            let top: Vec<String> = r.ranked.iter().take(10).map(|g| g.to_string()).collect();
            writeln!(
                q,
                "{},{},{},{},{}",
                r.query,
                r.identity,
                r.first_match.map_or(String::new(), |v| v.to_string()),
                r.average_precision.map_or(String::new(), |v| v.to_string()),
                top.join(" ")
            )
            .unwrap();
        }
        write("queries.csv", q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn ap_of_plus_minus_plus() {
        let d = arr2(&[[0.1, 0.2, 0.3]]);
        let r = evaluate(d.view(), &[1], &[1, 2, 1], &[0], &[1, 1, 1], Exclusion::None).unwrap();
        assert!((r.map - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(r.cmc, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn nearest_positive_gives_full_rank1() {
        let d = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let r = evaluate(d.view(), &[1, 2], &[1, 2], &[0, 0], &[1, 1], Exclusion::None).unwrap();
        assert_eq!(r.rank(1), 1.0);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let d = arr2(&[[0.5, 0.5]]);
        let first = evaluate(d.view(), &[1], &[1, 2], &[0], &[1, 1], Exclusion::None).unwrap();
        assert_eq!(first.rank(1), 1.0);
        let second = evaluate(d.view(), &[1], &[2, 1], &[0], &[1, 1], Exclusion::None).unwrap();
        assert_eq!(second.rank(1), 0.0);
        assert_eq!(second.rank(2), 1.0);
    }

    #[test]
    fn same_camera_match_is_excluded() {
        // gallery 0: true match from the query's camera, nearest
        // gallery 1: distractor; gallery 2: true match from another camera
        let d = arr2(&[[0.0, 0.5, 1.0]]);
        let none = evaluate(d.view(), &[7], &[7, 3, 7], &[1], &[1, 2, 2], Exclusion::None).unwrap();
        assert_eq!(none.rank(1), 1.0);
        let ex = evaluate(d.view(), &[7], &[7, 3, 7], &[1], &[1, 2, 2], Exclusion::SameIdSameCam).unwrap();
        assert_eq!(ex.rank(1), 0.0);
        assert_eq!(ex.rank(2), 1.0);
        assert_eq!(ex.queries[0].ranked, vec![1, 2]);
    }

    #[test]
    fn queries_without_positives_are_skipped() {
        let d = arr2(&[[0.1, 0.2], [0.3, 0.4]]);
        let r = evaluate(d.view(), &[1, 9], &[1, 2], &[0, 0], &[1, 1], Exclusion::None).unwrap();
        assert_eq!((r.evaluated, r.skipped), (1, 1));
        assert_eq!(r.rank(1), 1.0);
        let d = arr2(&[[0.1]]);
        assert!(evaluate(d.view(), &[9], &[1], &[0], &[1], Exclusion::None).is_err());
    }

    #[test]
    fn shape_and_finiteness_errors() {
        let d = arr2(&[[0.1, f64::NAN]]);
        assert!(evaluate(d.view(), &[1], &[1, 2], &[0], &[1, 1], Exclusion::None).is_err());
        let d = arr2(&[[0.1, 0.2]]);
        assert!(evaluate(d.view(), &[1], &[1], &[0], &[1], Exclusion::None).is_err());
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = arr2(&[[0.1, 0.2, 0.3]]);
        let r = evaluate(d.view(), &[1], &[1, 2, 1], &[0], &[1, 1, 1], Exclusion::None).unwrap();
        r.write_csv(dir.path()).unwrap();
        let s = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(s.starts_with("# scpnet ranking summary v1\nrank1,rank5,rank10,map"));
        let q = std::fs::read_to_string(dir.path().join("queries.csv")).unwrap();
        assert!(q.contains("0,1,1,0.8333333333333333,0 1 2"));
    }
}
