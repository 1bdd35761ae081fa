# %% [markdown]
# # Layers, shapes and a gradient check
#
# The network maps a ``(W, 38)`` window of one manipulator pair to three skill
# probabilities.  This walk-through builds it at each supported window width,
# prints the tensor shapes layer by layer and checks one backward pass
# against central differences.

# %%
import numpy as np

from surgskill import network as nw

for width in (30, 60, 90):
    spec = nw.ArchitectureSpec(window_width=width)
    print(f"W={width}: lengths {nw.stage_lengths(width)}, flatten width {spec.flatten_width}")

# %% [markdown]
# ## One forward pass
#
# Inference mode skips dropout, so the same input always gives the same output.

# %%
rng = np.random.default_rng(0)
params = nw.init_params(nw.ArchitectureSpec(window_width=60), seed=0)
x = rng.normal(size=(4, 60, 38))
probs, cache = nw.forward(params, x, "inference")
for i, stage in enumerate(cache.stages, start=1):
    print(f"stage {i}: input {stage['input'].shape} -> conv {stage['pre'].shape}")
print("probabilities\n", probs.round(3))
print("row sums", probs.sum(axis=1))

# %% [markdown]
# ## Backward pass versus finite differences
#
# Nudge a few weights by +-1e-5 and compare the slope of the loss with the
# analytic gradient.  The dropout seed is fixed so both passes see the same mask.

# %%
labels = np.array([0, 1, 2, 1])
probs, cache = nw.forward(params, x, "training", seed=1)
grads = nw.backward(params, cache, labels)

h = 1e-5
for name in ("conv1.kernels", "conv3.biases", "fc2.weights", "out.biases"):
    arr = params.values[name]
    idx = tuple(int(i) for i in np.unravel_index(np.argmax(np.abs(grads[name])), arr.shape))
    old = arr[idx]
    arr[idx] = old + h
    up = nw.cross_entropy_loss(nw.forward(params, x, "training", seed=1)[0], labels)
    arr[idx] = old - h
    down = nw.cross_entropy_loss(nw.forward(params, x, "training", seed=1)[0], labels)
    arr[idx] = old
    numeric = (up - down) / (2 * h)
    print(f"{name:14s}{idx}: analytic {grads[name][idx]: .6e}  numeric {numeric: .6e}")
