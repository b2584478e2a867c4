use std::collections::BTreeSet;

use super::{embed_click_path, EntityWorld, GenConfig};
use crate::error::{Error, Result};
use crate::graph::OrderGraph;
use crate::nn::Dense;

/// Minimum normalized edit similarity for two usernames to count as related.
pub const USERNAME_SIMILARITY: f64 = 0.8;

/// `1 − levenshtein / max_len`.
pub fn username_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(a, b)
}

/// One node per order; orders are linked when their accounts share a device,
/// share an address, or have similar usernames. Labels are the true roles.
/// The returned graph has zero feature columns; see [`build_features`].
pub fn project_order_graph(world: &EntityWorld) -> Result<OrderGraph> {
    let n = world.orders.len();
    if n == 0 {
        return Err(Error::Degenerate("world has no orders".into()));
    }
    let account_orders = {
        let mut m = vec![Vec::new(); world.accounts.len()];
        for (i, o) in world.orders.iter().enumerate() {
            m[o.account].push(i);
        }
        m
    };
    let mut edges = BTreeSet::new();
    let link_group = |accounts: &[usize], edges: &mut BTreeSet<(usize, usize)>| {
        let orders: Vec<usize> = accounts.iter().flat_map(|&a| account_orders[a].iter().copied()).collect();
        for (k, &u) in orders.iter().enumerate() {
            for &v in &orders[k + 1..] {
                if u != v {
                    edges.insert((u.min(v), u.max(v)));
                }
            }
        }
    };

    for group in world.device_accounts() {
        link_group(&group, &mut edges);
    }
    let mut by_address = vec![Vec::new(); world.n_addresses];
    for (a, acc) in world.accounts.iter().enumerate() {
        by_address[acc.address].push(a);
    }
    for group in &by_address {
        link_group(group, &mut edges);
    }
    // Orders of the same account are also linked, though generated worlds
    // place one order per account.
    for orders in &account_orders {
        for (k, &u) in orders.iter().enumerate() {
            for &v in &orders[k + 1..] {
                edges.insert((u.min(v), u.max(v)));
            }
        }
    }

    let names: Vec<&str> = world.accounts.iter().map(|a| a.username.as_str()).collect();
    for a in 0..names.len() {
        for b in a + 1..names.len() {
            let (la, lb) = (names[a].chars().count(), names[b].chars().count());
            let longest = la.max(lb) as f64;
            // edit distance is at least the length difference
            if longest == 0.0 || 1.0 - (la.abs_diff(lb) as f64) / longest < USERNAME_SIMILARITY {
                continue;
            }
            if username_similarity(names[a], names[b]) >= USERNAME_SIMILARITY {
                link_group(&[a, b], &mut edges);
            }
        }
    }

    let edges: Vec<_> = edges.into_iter().collect();
    OrderGraph::build(&edges, Dense::zeros(n, 0), Some(world.labels()))
}

/// Row per order: raw tabular vector ∥ click-path embedding ∥ degree.
pub fn build_features(world: &EntityWorld, g: &OrderGraph, cfg: &GenConfig) -> Result<Dense> {
    if world.orders.len() != g.n_nodes() {
        return Err(Error::RowMismatch {
            what: "graph nodes",
            got: g.n_nodes(),
            expected: world.orders.len(),
        });
    }
    let width = cfg.feature_width();
    let mut x = Dense::zeros(g.n_nodes(), width);
    for (i, order) in world.orders.iter().enumerate() {
        if order.raw.len() != cfg.raw_feature_dim {
            return Err(Error::RowMismatch {
                what: "raw feature width",
                got: order.raw.len(),
                expected: cfg.raw_feature_dim,
            });
        }
        let row = x.row_mut(i);
        row[..cfg.raw_feature_dim].copy_from_slice(&order.raw);
        row[cfg.raw_feature_dim..width - 1].copy_from_slice(&embed_click_path(&order.click_path, cfg.embed_dim));
        row[width - 1] = g.degree(i)? as f64;
    }
    Ok(x)
}
