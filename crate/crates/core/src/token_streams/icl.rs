//! In-context prompt layout: `[speaker, prompt_text, target_text, prompt_semantic]`.

/// Optional sentinels around the semantic segment. Nothing in the pipeline
/// depends on them; they exist so a tokenizer with BOS/EOS ids can be slotted in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Sentinels {
    pub semantic_bos: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IclLayout {
    pub prompt_text: Vec<u32>,
    pub target_text: Vec<u32>,
    pub prompt_semantic: Vec<u32>,
    pub sentinels: Sentinels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IclItem {
    /// Position of the global speaker embedding.
    Speaker,
    Text(u32),
    Semantic(u32),
}

/// Flattened prompt with the start index of each segment after the speaker slot:
/// `boundaries = [prompt_text_start, target_text_start, prompt_semantic_start]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclSequence {
    pub items: Vec<IclItem>,
    pub boundaries: [usize; 3],
    pub sentinels: Sentinels,
}

pub fn build_icl_sequence(layout: &IclLayout) -> IclSequence {
    let mut items = Vec::with_capacity(
        1 + layout.prompt_text.len() + layout.target_text.len() + layout.prompt_semantic.len() + 1,
    );
    items.push(IclItem::Speaker);
    let b0 = items.len();
    items.extend(layout.prompt_text.iter().map(|&t| IclItem::Text(t)));
    let b1 = items.len();
    items.extend(layout.target_text.iter().map(|&t| IclItem::Text(t)));
    let b2 = items.len();
    if let Some(bos) = layout.sentinels.semantic_bos {
        items.push(IclItem::Semantic(bos));
    }
    items.extend(layout.prompt_semantic.iter().map(|&t| IclItem::Semantic(t)));
    IclSequence { items, boundaries: [b0, b1, b2], sentinels: layout.sentinels }
}

impl IclSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Recovers the layout from the flat sequence and its boundaries.
    pub fn split(&self) -> IclLayout {
        let [b0, b1, b2] = self.boundaries;
        let ids = |range: &[IclItem]| {
            range
                .iter()
                .filter_map(|it| match it {
                    IclItem::Text(t) | IclItem::Semantic(t) => Some(*t),
                    IclItem::Speaker => None,
                })
                .collect::<Vec<_>>()
        };
        let skip = usize::from(self.sentinels.semantic_bos.is_some());
        IclLayout {
            prompt_text: ids(&self.items[b0..b1]),
            target_text: ids(&self.items[b1..b2]),
            prompt_semantic: ids(&self.items[b2 + skip..]),
            sentinels: self.sentinels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn speaker_only() {
        let seq = build_icl_sequence(&IclLayout::default());
        assert_eq!(seq.items, vec![IclItem::Speaker]);
        assert_eq!(seq.boundaries, [1, 1, 1]);
    }

    #[test]
    fn documented_order() {
        let layout = IclLayout {
            prompt_text: vec![b'a' as u32, b'b' as u32],
            target_text: vec![b'c' as u32, b'd' as u32],
            prompt_semantic: vec![5, 6],
            ..Default::default()
        };
        let seq = build_icl_sequence(&layout);
        use IclItem::*;
        assert_eq!(
            seq.items,
            vec![Speaker, Text(97), Text(98), Text(99), Text(100), Semantic(5), Semantic(6)]
        );
        assert_eq!(seq.boundaries, [1, 3, 5]);
    }

    #[test]
    fn split_round_trips_500_seeded_layouts() {
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        for _ in 0..500 {
            let mut v = |n: usize| (0..rng.gen_range(0..n)).map(|_| rng.gen_range(0..1000)).collect::<Vec<u32>>();
            let mut layout = IclLayout { prompt_text: v(12), target_text: v(12), prompt_semantic: v(30), ..Default::default() };
            if rng.gen_bool(0.3) {
                layout.sentinels.semantic_bos = Some(rng.gen_range(1000..2000));
            }
            let seq = build_icl_sequence(&layout);
            assert_eq!(seq.split(), layout);
            assert_eq!(seq.items[0], IclItem::Speaker);
        }
    }
}
