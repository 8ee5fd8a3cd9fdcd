use dirfuse::landscape::edge_table;
use dirfuse::{GridShape, LabelRaster};
use proptest::prelude::*;

/// `window` placed at (top, left) in a canvas filled with `fill`.
fn canvas(
    window: &[u8],
    ww: usize,
    wh: usize,
    top: usize,
    left: usize,
    width: usize,
    height: usize,
    fill: u8,
) -> LabelRaster {
    let mut v = vec![fill; width * height];
    for r in 0..wh {
        for c in 0..ww {
            v[(top + r) * width + left + c] = window[r * ww + c];
        }
    }
    LabelRaster::new(GridShape::with_classes(width, height, 4).unwrap(), v).unwrap()
}

fn window() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u8..4, w * h)))
}

proptest! {
    #[test]
    fn growing_a_uniform_patch_keeps_edges(
        (ww, wh, v) in window(),
        fill in 0u8..4,
        grow_right in 0usize..6,
        grow_down in 0usize..6,
    ) {
        let base = canvas(&v, ww, wh, 1, 1, ww + 2, wh + 2, fill);
        let grown = canvas(&v, ww, wh, 1, 1, ww + 2 + grow_right, wh + 2 + grow_down, fill);
        let (a, b) = (edge_table(&base), edge_table(&grown));
        prop_assert_eq!(a.total, b.total);
        prop_assert_eq!(a.m, b.m);
        prop_assert_eq!(a.pairs().collect::<Vec<_>>(), b.pairs().collect::<Vec<_>>());
    }
}
