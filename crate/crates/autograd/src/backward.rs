use std::collections::{HashMap, HashSet};

use ndarray::Array2;

use crate::tensor::{GradModeGuard, Tensor};

/// Gradients of `output` with respect to each tensor in `wrt`.
///
/// `output` is seeded with ones, so a non-scalar output yields the gradient of
/// its element sum. Tensors in `wrt` that `output` does not depend on receive
/// zeros. With `create_graph` the returned gradients are themselves part of
/// the graph and can be differentiated again.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    let (r, c) = output.shape();
    grad_with_seed(output, &Tensor::constant(Array2::ones((r, c))), wrt, create_graph)
}

pub fn grad_with_seed(
    output: &Tensor,
    seed: &Tensor,
    wrt: &[&Tensor],
    create_graph: bool,
) -> Vec<Tensor> {
    assert_eq!(output.shape(), seed.shape(), "seed gradient shape");
    let targets: HashSet<usize> = wrt.iter().map(|t| t.id()).collect();
    let order = topo_order(output);
    let needed = needed_nodes(&order, &targets);

    let _mode = GradModeGuard::new(create_graph);
    let mut grads: HashMap<usize, Tensor> = HashMap::new();
    if output.requires_grad() {
        grads.insert(output.id(), seed.clone());
    }

    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.id()).cloned() else {
            continue;
        };
        let Some(backward) = node.0.backward.as_ref() else {
            continue;
        };
        if !needed.contains(&node.id()) {
            continue;
        }
        let inputs = &node.0.inputs;
        let input_grads = backward(inputs, node, &g);
        debug_assert_eq!(input_grads.len(), inputs.len());
        for (inp, ig) in inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() || !needed.contains(&inp.id()) {
                continue;
            }
            debug_assert_eq!(ig.shape(), inp.shape(), "gradient shape mismatch");
            let acc = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&ig),
                None => ig,
            };
            grads.insert(inp.id(), acc);
        }
    }

    wrt.iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols()))
        })
        .collect()
}

/// Nodes reachable from `root` through tracked edges, inputs before users.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    if !root.requires_grad() {
        return order;
    }
    // (node, next input index to visit)
    let mut stack: Vec<(Tensor, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, i)) = stack.pop() {
        if i < node.0.inputs.len() {
            let child = node.0.inputs[i].clone();
            stack.push((node, i + 1));
            if child.requires_grad() && visited.insert(child.id()) {
                stack.push((child, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}

/// Nodes from which at least one target is reachable.
fn needed_nodes(order: &[Tensor], targets: &HashSet<usize>) -> HashSet<usize> {
    let mut needed = HashSet::new();
    for node in order {
        if targets.contains(&node.id())
            || node.0.inputs.iter().any(|i| needed.contains(&i.id()))
        {
            needed.insert(node.id());
        }
    }
    needed
}
