use std::any::Any;
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) tape: u64,
}

impl Var {
    pub fn index(&self) -> usize {
        self.id
    }
}

/// Arguments handed to a VJP closure during the reverse sweep.
pub struct VjpArgs<'a> {
    pub inputs: &'a [Rc<Tensor>],
    pub output: &'a Tensor,
    pub cotangent: &'a Tensor,
    /// `needs[i]` is false when input `i` does not lead to any leaf that
    /// requires a gradient; rules may skip that cotangent.
    pub needs: &'a [bool],
}

pub type VjpFn = Box<dyn Fn(&VjpArgs<'_>) -> Result<Vec<Option<Tensor>>>>;

/// A user-registered differentiable operation with a hand-written pullback.
///
/// `forward` returns the output plus a saved context that is handed back to
/// `backward` together with the output cotangent. `backward` must return one
/// cotangent per input, each shaped like that input.
pub trait CustomVjpRule {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, Box<dyn Any>)>;

    fn backward(
        &self,
        ctx: &dyn Any,
        inputs: &[Rc<Tensor>],
        cotangent: &Tensor,
    ) -> Result<Vec<Tensor>>;
}

struct Node {
    op: String,
    value: Rc<Tensor>,
    parents: Vec<usize>,
    vjp: Option<VjpFn>,
    requires_grad: bool,
}

/// Reverse-mode recording tape. Nodes are appended in evaluation order so
/// the reverse sweep is a plain descending loop over node ids.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    rules: RefCell<BTreeMap<String, Rc<dyn CustomVjpRule>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            rules: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            id: nodes.len() - 1,
            tape: self.id,
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(Node {
            op: "leaf".into(),
            value: Rc::new(value),
            parents: vec![],
            vjp: None,
            requires_grad: true,
        })
    }

    /// A non-differentiable input; no cotangent is propagated into it.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Node {
            op: "const".into(),
            value: Rc::new(value),
            parents: vec![],
            vjp: None,
            requires_grad: false,
        })
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id {
            return Err(Error::contract(format!(
                "variable {} belongs to a different tape",
                v.id
            )));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> Rc<Tensor> {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn op_name(&self, v: Var) -> String {
        self.nodes.borrow()[v.id].op.clone()
    }

    /// Records an operation. `forward` computes the output from the input
    /// values; `vjp` maps the output cotangent back to input cotangents.
    pub fn record<F, B>(&self, op: &str, inputs: &[Var], forward: F, vjp: B) -> Result<Var>
    where
        F: FnOnce(&[&Tensor]) -> Result<Tensor>,
        B: Fn(&VjpArgs<'_>) -> Result<Vec<Option<Tensor>>> + 'static,
    {
        for &v in inputs {
            self.check(v)?;
        }
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor> = inputs.iter().map(|v| &*nodes[v.id].value).collect();
            let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
            (forward(&values)?, requires_grad)
        };
        Ok(self.push(Node {
            op: op.to_string(),
            value: Rc::new(value),
            parents: inputs.iter().map(|v| v.id).collect(),
            vjp: if requires_grad { Some(Box::new(vjp)) } else { None },
            requires_grad,
        }))
    }

    /// Registers a custom rule under its name. Returns false (and changes
    /// nothing) if a rule of that name is already present.
    pub fn register_rule(&self, rule: Rc<dyn CustomVjpRule>) -> bool {
        let mut rules = self.rules.borrow_mut();
        if rules.contains_key(rule.name()) {
            return false;
        }
        rules.insert(rule.name().to_string(), rule);
        true
    }

    pub fn has_rule(&self, name: &str) -> bool {
        self.rules.borrow().contains_key(name)
    }

    /// Applies a previously registered rule by name.
    pub fn call(&self, name: &str, inputs: &[Var]) -> Result<Var> {
        let rule = self
            .rules
            .borrow()
            .get(name)
            .cloned()
            .ok_or_else(|| Error::contract(format!("no rule named `{name}` registered")))?;
        self.apply_rule(rule, inputs)
    }

    pub fn apply_rule(&self, rule: Rc<dyn CustomVjpRule>, inputs: &[Var]) -> Result<Var> {
        let name = rule.name().to_string();
        let ctx: RefCell<Option<Box<dyn Any>>> = RefCell::new(None);
        let fwd_rule = Rc::clone(&rule);
        let var = self.record(
            &name,
            inputs,
            |xs| {
                let (out, saved) = fwd_rule.forward(xs)?;
                *ctx.borrow_mut() = Some(saved);
                Ok(out)
            },
            |_| Ok(vec![]),
        )?;
        // Swap in the real pullback now that the context exists.
        let saved = ctx.into_inner().expect("forward stores its context");
        let mut nodes = self.nodes.borrow_mut();
        if nodes[var.id].vjp.is_some() {
            nodes[var.id].vjp = Some(Box::new(move |args: &VjpArgs<'_>| {
                let cots = rule.backward(&*saved, args.inputs, args.cotangent)?;
                Ok(cots.into_iter().map(Some).collect())
            }));
        }
        Ok(var)
    }

    /// Reverse sweep from a scalar output with unit seed.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let value = self.value(output);
        if value.len() != 1 {
            return Err(Error::contract(format!(
                "backward() needs a scalar output, got shape {:?}",
                value.shape()
            )));
        }
        self.backward_with(output, Tensor::full(value.shape(), 1.0))
    }

    /// Reverse sweep from an arbitrary output seeded with `cotangent`.
    pub fn backward_with(&self, output: Var, cotangent: Tensor) -> Result<Gradients> {
        self.check(output)?;
        let nodes = self.nodes.borrow();
        if nodes[output.id].value.shape() != cotangent.shape() {
            return Err(Error::Shape {
                op: "backward".into(),
                expected: nodes[output.id].value.shape().to_vec(),
                got: cotangent.shape().to_vec(),
            });
        }
        let mut cots: Vec<Option<Tensor>> = vec![None; output.id + 1];
        cots[output.id] = Some(cotangent);

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(vjp) = node.vjp.as_ref() else {
                continue;
            };
            let Some(cot) = cots[id].take() else {
                continue;
            };
            let inputs: Vec<Rc<Tensor>> = node
                .parents
                .iter()
                .map(|&p| Rc::clone(&nodes[p].value))
                .collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let pulled = vjp(&VjpArgs {
                inputs: &inputs,
                output: &node.value,
                cotangent: &cot,
                needs: &needs,
            })?;
            if pulled.len() != node.parents.len() {
                return Err(Error::Structural {
                    op: node.op.clone(),
                    msg: format!(
                        "pullback returned {} cotangents for {} inputs",
                        pulled.len(),
                        node.parents.len()
                    ),
                });
            }
            for (k, (g, &p)) in pulled.into_iter().zip(&node.parents).enumerate() {
                let Some(g) = g else { continue };
                if !needs[k] {
                    continue;
                }
                if g.shape() != nodes[p].value.shape() {
                    return Err(Error::Structural {
                        op: node.op.clone(),
                        msg: format!(
                            "cotangent {k} has shape {:?}, input has shape {:?}",
                            g.shape(),
                            nodes[p].value.shape()
                        ),
                    });
                }
                match &mut cots[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        // Only leaves keep their cotangents.
        for (id, slot) in cots.iter_mut().enumerate() {
            let node = &nodes[id];
            if !(node.vjp.is_none() && node.requires_grad) {
                *slot = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: cots,
        })
    }
}

/// Total derivatives of the backward seed with respect to each leaf.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like `like` if nothing reached it.
    pub fn wrt(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}
