use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::features::{FeatureStore, ItemKey};
use super::params::{Model, Table};
use crate::data::Impression;
use crate::graph::{Metapath, StatVector, VideoId};
use crate::sampler::ComputationGraph;
use crate::{Error, Result};

/// Metapaths through which an `E2` slot was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PathBits(u8);

impl PathBits {
    pub fn of(path: Metapath) -> Self {
        PathBits(1 << path as u8)
    }

    pub fn contains(self, path: Metapath) -> bool {
        self.0 & (1 << path as u8) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    fn insert(&mut self, path: Metapath) {
        self.0 |= 1 << path as u8;
    }

    fn remove(&mut self, path: Metapath) {
        self.0 &= !(1 << path as u8);
    }
}

/// Ablation operators. Every flag only ever removes input, so masks are
/// idempotent and their union is order-independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AblationMask {
    /// Remove id representations: no `h2`, and zeroed id parts in `E3` rows.
    pub drop_repr: bool,
    /// Zero the statistic parts of `E3` rows.
    pub drop_stats: bool,
    pub drop_physical: bool,
    pub drop_author: bool,
    pub drop_product: bool,
    pub drop_semantic: bool,
    pub drop_h2: bool,
    pub drop_h3: bool,
    /// Zero the target video's own statistics.
    pub drop_target_stats: bool,
}

const FLAG_NAMES: [&str; 9] = [
    "drop_repr",
    "drop_stats",
    "drop_physical",
    "drop_author",
    "drop_product",
    "drop_semantic",
    "drop_h2",
    "drop_h3",
    "drop_target_stats",
];

impl AblationMask {
    pub const NONE: AblationMask = AblationMask {
        drop_repr: false,
        drop_stats: false,
        drop_physical: false,
        drop_author: false,
        drop_product: false,
        drop_semantic: false,
        drop_h2: false,
        drop_h3: false,
        drop_target_stats: false,
    };

    /// The base model: no transfer at all.
    pub fn base() -> Self {
        AblationMask { drop_h2: true, drop_h3: true, ..Self::NONE }
    }

    fn flags(&self) -> [bool; 9] {
        [
            self.drop_repr,
            self.drop_stats,
            self.drop_physical,
            self.drop_author,
            self.drop_product,
            self.drop_semantic,
            self.drop_h2,
            self.drop_h3,
            self.drop_target_stats,
        ]
    }

    fn flags_mut(&mut self) -> [&mut bool; 9] {
        [
            &mut self.drop_repr,
            &mut self.drop_stats,
            &mut self.drop_physical,
            &mut self.drop_author,
            &mut self.drop_product,
            &mut self.drop_semantic,
            &mut self.drop_h2,
            &mut self.drop_h3,
            &mut self.drop_target_stats,
        ]
    }

    pub fn union(self, other: AblationMask) -> AblationMask {
        let mut out = self;
        for (f, o) in out.flags_mut().into_iter().zip(other.flags()) {
            *f |= o;
        }
        out
    }

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }

    /// Parses `none` or flags joined by `+`, e.g. `drop_h2+drop_h3`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut m = Self::NONE;
        let s = s.trim();
        if s.is_empty() || s == "none" || s == "full" {
            return Ok(m);
        }
        if s == "base" {
            return Ok(Self::base());
        }
        for part in s.split('+') {
            let i = FLAG_NAMES
                .iter()
                .position(|n| *n == part.trim())
                .ok_or_else(|| Error::Invalid(format!("unknown ablation flag `{part}`")))?;
            *m.flags_mut()[i] = true;
        }
        Ok(m)
    }

    /// Applies the transfer-side flags to assembled input.
    pub fn apply(&self, t: &mut TransferInput) {
        let drop = [
            (Metapath::Author, self.drop_author || self.drop_physical),
            (Metapath::Product, self.drop_product || self.drop_physical),
            (Metapath::Semantic, self.drop_semantic),
        ];
        for (path, off) in drop {
            if off {
                for slot in &mut t.e2 {
                    slot.1.remove(path);
                }
                for slot in &mut t.e3[path as usize] {
                    slot.1 = false;
                }
            }
        }
        t.h2_off |= self.drop_h2 || self.drop_repr;
        t.h3_off |= self.drop_h3;
        t.zero_repr |= self.drop_repr;
        t.zero_stats |= self.drop_stats;
    }
}

impl fmt::Display for AblationMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = FLAG_NAMES.iter().zip(self.flags()).filter(|(_, b)| *b).map(|(n, _)| *n).collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join("+"))
        }
    }
}

/// Neighbor-side model input with validity flags per slot.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransferInput {
    /// Deduplicated union of all neighbor lists: video-id row and source paths.
    pub e2: Vec<(u32, PathBits)>,
    /// Per-metapath neighbor items with a validity flag.
    pub e3: [Vec<(Arc<ItemKey>, bool)>; 3],
    pub h2_off: bool,
    pub h3_off: bool,
    pub zero_repr: bool,
    pub zero_stats: bool,
}

impl TransferInput {
    /// No transfer: the input of the base model.
    pub fn none() -> Self {
        TransferInput { h2_off: true, h3_off: true, ..Default::default() }
    }

    pub(crate) fn e2_rows(&self) -> impl Iterator<Item = u32> + '_ {
        let off = self.h2_off;
        self.e2.iter().filter(move |(_, b)| !off && !b.is_empty()).map(|(r, _)| *r)
    }

    pub(crate) fn e3_items(&self, path: Metapath) -> impl Iterator<Item = &ItemKey> + '_ {
        let off = self.h3_off;
        self.e3[path as usize].iter().filter(move |(_, ok)| !off && *ok).map(|(k, _)| k.as_ref())
    }
}

/// One fully assembled impression.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub target: Arc<ItemKey>,
    pub transfer: TransferInput,
    pub behaviors: Vec<Arc<ItemKey>>,
    pub user: u32,
    pub user_numeric: Vec<f64>,
    pub label: f64,
}

/// Turns impressions and computation graphs into [`Sample`]s for one model.
pub struct Featurizer {
    items: HashMap<VideoId, Arc<ItemKey>>,
    oov: Arc<ItemKey>,
    users: HashMap<u64, (u32, Vec<f64>)>,
    oov_user: (u32, Vec<f64>),
    max_behaviors: usize,
    video_rows: HashMap<VideoId, u32>,
    oov_video_row: u32,
}

impl Featurizer {
    pub fn new(model: &Model, store: &FeatureStore) -> Self {
        let video = model.table(Table::Video);
        let items = store
            .videos
            .iter()
            .map(|(&id, rec)| {
                let tokens = rec.tokens.iter().map(|&t| model.table(Table::Token).row_of(Some(t as u64))).collect();
                let key = ItemKey {
                    video: video.row_of(Some(id.0)),
                    item: model.table(Table::Item).row_of(rec.product),
                    author: model.table(Table::Author).row_of(rec.author),
                    category: model.table(Table::Category).row_of(rec.category),
                    tokens,
                    stats: model.normalizer.apply(&rec.stats),
                };
                (id, Arc::new(key))
            })
            .collect();
        let oov = Arc::new(ItemKey {
            video: video.oov_row(),
            item: model.table(Table::Item).oov_row(),
            author: model.table(Table::Author).oov_row(),
            category: model.table(Table::Category).oov_row(),
            tokens: Vec::new(),
            stats: model.normalizer.apply(&StatVector::default()),
        });
        let user_table = model.table(Table::User);
        let users = store.users.iter().map(|(&u, r)| (u, (user_table.row_of(Some(u)), r.numeric.clone()))).collect();
        let oov_user = (user_table.oov_row(), vec![0.0; model.config.user_numeric]);
        let video_rows = store.videos.keys().map(|&v| (v, video.row_of(Some(v.0)))).collect();
        Featurizer {
            items,
            oov,
            users,
            oov_user,
            max_behaviors: model.config.max_behaviors,
            video_rows,
            oov_video_row: video.oov_row(),
        }
    }

    /// Item view of a video; unknown videos use OOV rows and default stats.
    pub fn item(&self, video: VideoId) -> Arc<ItemKey> {
        self.items.get(&video).cloned().unwrap_or_else(|| self.oov.clone())
    }

    /// Assembles transfer input from a computation graph, then applies `mask`.
    pub fn transfer(&self, cg: Option<&ComputationGraph>, mask: &AblationMask) -> TransferInput {
        let Some(cg) = cg else {
            let mut t = TransferInput::default();
            mask.apply(&mut t);
            return t;
        };
        let mut t = TransferInput::default();
        let mut seen: HashMap<VideoId, usize> = HashMap::new();
        for path in Metapath::ALL {
            for n in cg.neighbors(path) {
                match seen.get(&n.video) {
                    Some(&i) => t.e2[i].1.insert(path),
                    None => {
                        seen.insert(n.video, t.e2.len());
                        let row = self.video_rows.get(&n.video).copied().unwrap_or(self.oov_video_row);
                        t.e2.push((row, PathBits::of(path)));
                    }
                }
                t.e3[path as usize].push((self.item(n.video), true));
            }
        }
        mask.apply(&mut t);
        t
    }

    pub fn sample(&self, imp: &Impression, cg: Option<&ComputationGraph>, mask: &AblationMask) -> Sample {
        self.assemble(imp, self.transfer(cg, mask), mask)
    }

    /// Sample of the base model, bypassing neighbor assembly entirely.
    pub fn base_sample(&self, imp: &Impression) -> Sample {
        self.assemble(imp, TransferInput::none(), &AblationMask::base())
    }

    /// Builds a sample around pre-assembled transfer input; `mask` is used only
    /// for target-side flags here.
    pub fn assemble(&self, imp: &Impression, transfer: TransferInput, mask: &AblationMask) -> Sample {
        let mut target = self.item(imp.target);
        if mask.drop_target_stats {
            let mut k = (*target).clone();
            k.stats = [0.0; StatVector::LEN];
            target = Arc::new(k);
        }
        let behaviors = imp.behaviors.iter().take(self.max_behaviors).map(|&b| self.item(b)).collect();
        let (user, numeric) = self.users.get(&imp.user).unwrap_or(&self.oov_user);
        Sample {
            target,
            transfer,
            behaviors,
            user: *user,
            user_numeric: numeric.clone(),
            label: if imp.label { 1.0 } else { 0.0 },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input() -> TransferInput {
        let k = Arc::new(ItemKey { video: 0, item: 0, author: 0, category: 0, tokens: vec![], stats: [0.0; 5] });
        let mut both = PathBits::of(Metapath::Author);
        both.insert(Metapath::Semantic);
        TransferInput {
            e2: vec![(1, PathBits::of(Metapath::Author)), (2, PathBits::of(Metapath::Product)), (3, both)],
            e3: [vec![(k.clone(), true)], vec![(k.clone(), true)], vec![(k, true)]],
            ..Default::default()
        }
    }

    fn mask_from(bits: u16) -> AblationMask {
        let mut m = AblationMask::NONE;
        for (i, f) in m.flags_mut().into_iter().enumerate() {
            *f = bits & (1 << i) != 0;
        }
        m
    }

    #[test]
    fn parse_and_display_round_trip() {
        let m = AblationMask::parse("drop_h2+drop_h3").unwrap();
        assert_eq!(m, AblationMask::base());
        assert_eq!(m.to_string(), "drop_h2+drop_h3");
        assert_eq!(AblationMask::parse("none").unwrap(), AblationMask::NONE);
        assert!(AblationMask::parse("drop_everything").is_err());
    }

    #[test]
    fn physical_drop_keeps_semantic_reach() {
        let mut t = input();
        AblationMask { drop_physical: true, ..AblationMask::NONE }.apply(&mut t);
        assert_eq!(t.e2_rows().collect::<Vec<_>>(), vec![3]);
        assert_eq!(t.e3_items(Metapath::Author).count(), 0);
        assert_eq!(t.e3_items(Metapath::Semantic).count(), 1);
    }

    proptest! {
        #[test]
        fn masks_compose_in_any_order(a in 0u16..512, b in 0u16..512) {
            let (ma, mb) = (mask_from(a), mask_from(b));
            let mut x = input();
            ma.apply(&mut x);
            mb.apply(&mut x);
            let mut y = input();
            mb.apply(&mut y);
            ma.apply(&mut y);
            let mut z = input();
            ma.union(mb).apply(&mut z);
            prop_assert_eq!(&x, &y);
            prop_assert_eq!(&x, &z);
            let mut again = z.clone();
            ma.union(mb).apply(&mut again);
            prop_assert_eq!(again, z);
        }
    }
}
