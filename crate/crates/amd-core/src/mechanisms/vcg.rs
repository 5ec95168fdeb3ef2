//! Clarke payments for multi-unit unit-demand auctions.

use smallvec::SmallVec;

/// Allocate `n_items` identical units among unit-demand bidders: the
/// `n_items` highest bids win and each winner pays the (n_items+1)-th
/// highest bid — the externality they impose on the displaced bidder.
/// Equal bids resolve in favor of the lower index.
///
/// Returns the winner indices (ascending) and the full payment vector.
pub fn vcg_unit_demand(bids: &[f64], n_items: usize) -> (SmallVec<[usize; 8]>, SmallVec<[f64; 8]>) {
    let n = bids.len();
    assert!(n_items < n, "need n_items < n_bidders for the threshold bid to exist");
    let mut order: SmallVec<[usize; 8]> = (0..n).collect();
    // Stable sort by descending bid keeps lower indices first among ties.
    order.sort_by(|&a, &b| bids[b].total_cmp(&bids[a]));
    let threshold = bids[order[n_items]];
    let mut winners: SmallVec<[usize; 8]> = order[..n_items].iter().copied().collect();
    winners.sort_unstable();
    let mut payments: SmallVec<[f64; 8]> = SmallVec::from_elem(0.0, n);
    for &w in &winners {
        payments[w] = threshold;
    }
    (winners, payments)
}

/// Total Clarke payment at a profile: `n_items` times the threshold bid.
/// Hot path of the redistribution fixes, so it skips the index
/// bookkeeping of [`vcg_unit_demand`].
pub fn vcg_total_payment(bids: &[f64], n_items: usize) -> f64 {
    debug_assert!(n_items < bids.len());
    let mut sorted: SmallVec<[f64; 8]> = SmallVec::from_slice(bids);
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted[n_items] * n_items as f64
}
