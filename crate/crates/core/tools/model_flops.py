#!/usr/bin/env python3
"""Generate the per-layer FLOP / activation-size tables in data/models/.

Counting rules (one data point, float32 activations):

* convolution: 2 * C_in * C_out * k_h * k_w * H_out * W_out / groups
* batch norm: 2 FLOPs per output element (scale and shift)
* ReLU, residual add: 1 FLOP per output element
* max / average pooling: window size per output element (global average
  pooling: one per input element)
* fully connected: 2 * in * out
* flatten: 1 per element (it is a copy, but the table needs a positive count)

Transformer layers (GPT-2 small) use the usual forward estimate
B * s * (24 h^2 + 4 s h): the dense projections (QKV, output, two MLP
matrices, 12 h^2 multiply-adds per token) plus the attention score and
weighted-sum products. The language-model head (2 * B * s * h * vocab) is
folded into the last layer, the token/position embedding into the first.

Usage: python3 tools/model_flops.py [output_dir]
"""

import os
import sys

F32 = 4


def conv(cin, cout, k, hout, wout, groups=1):
    return 2 * cin * cout * k * k * hout * wout // groups


def write(path, model_id, input_bytes, output_bytes, layers, note):
    with open(path, "w") as f:
        f.write(f"# {note}\n")
        f.write("# Generated by tools/model_flops.py; do not edit by hand.\n")
        f.write(f'id = "{model_id}"\n')
        f.write(f"input_bytes = {input_bytes}\n")
        f.write(f"output_bytes = {output_bytes}\n\n")
        for i, (name, flops, out_bytes) in enumerate(layers, start=1):
            f.write("[[layers]]\n")
            f.write(f"# {name}\n")
            f.write(f"index = {i}\n")
            f.write(f"flops = {float(flops):.6e}\n")
            f.write(f"output_bytes = {out_bytes}\n\n")
    total = sum(l[1] for l in layers)
    print(f"{path}: {len(layers)} layers, {total / 1e9:.3f} GFLOP")


def resnet50():
    layers = []
    h = 112
    el = 64 * h * h
    layers.append(("conv1 7x7/2 3->64", conv(3, 64, 7, h, h), el * F32))
    layers.append(("bn1", 2 * el, el * F32))
    layers.append(("relu", el, el * F32))
    h = 56
    el = 64 * h * h
    layers.append(("maxpool 3x3/2", 9 * el, el * F32))
    cin = 64
    for stage, (mid, blocks, stride) in enumerate([(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)], start=1):
        for b in range(blocks):
            s = stride if b == 0 else 1
            hin = h
            hout = hin // s
            cout = 4 * mid
            f = 0
            f += conv(cin, mid, 1, hin, hin) + 2 * mid * hin * hin + mid * hin * hin
            f += conv(mid, mid, 3, hout, hout) + 3 * mid * hout * hout
            f += conv(mid, cout, 1, hout, hout) + 2 * cout * hout * hout
            if b == 0:
                f += conv(cin, cout, 1, hout, hout) + 2 * cout * hout * hout
            f += 2 * cout * hout * hout  # add + relu
            layers.append((f"layer{stage}.{b} bottleneck {cin}->{cout}", f, cout * hout * hout * F32))
            cin = cout
            h = hout
    layers.append(("avgpool", cin * h * h, cin * F32))
    layers.append(("flatten", cin, cin * F32))
    layers.append(("fc 2048->1000", 2 * cin * 1000, 1000 * F32))
    return layers


def resnet56():
    layers = []
    h = 32
    el = 16 * h * h
    layers.append(("stem conv3x3 3->16 + bn + relu", conv(3, 16, 3, h, h) + 3 * el, el * F32))
    cin = 16
    for stage, (cout, stride) in enumerate([(16, 1), (32, 2), (64, 2)], start=1):
        for b in range(9):
            s = stride if b == 0 else 1
            hout = h // s
            f = conv(cin, cout, 3, hout, hout) + 3 * cout * hout * hout
            f += conv(cout, cout, 3, hout, hout) + 2 * cout * hout * hout
            f += 2 * cout * hout * hout  # add (zero-padded shortcut) + relu
            layers.append((f"stage{stage}.{b} basic {cin}->{cout}", f, cout * hout * hout * F32))
            cin = cout
            h = hout
    layers.append(("avgpool", cin * h * h, cin * F32))
    layers.append(("fc 64->10", 2 * cin * 10, 10 * F32))
    return layers


def gpt2_small(batch, seq=64, hidden=768, n_layers=12, vocab=50257):
    tokens = batch * seq
    per_layer = tokens * (24 * hidden * hidden + 4 * seq * hidden)
    feature = tokens * hidden * F32
    layers = []
    for i in range(1, n_layers + 1):
        f = per_layer
        name = f"block {i}"
        if i == 1:
            f += tokens * hidden  # embedding add
            name += " + embeddings"
        if i == n_layers:
            f += 2 * tokens * hidden * vocab
            name += " + lm head"
        layers.append((name, f, feature))
    # next-token ids (int64) leave the last block
    layers[-1] = (layers[-1][0], layers[-1][1], tokens * 8)
    return layers, tokens * 8, tokens * 8


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(here, "..", "data", "models")
    os.makedirs(out, exist_ok=True)
    write(os.path.join(out, "resnet50_224.toml"), "resnet50_224", 3 * 224 * 224 * F32, 1000 * F32, resnet50(),
          "ResNet-50, 224x224x3 input, 23 units: conv1, bn1, relu, maxpool, 16 bottlenecks, avgpool, flatten, fc")
    write(os.path.join(out, "resnet56_32.toml"), "resnet56_32", 3 * 32 * 32 * F32, 10 * F32, resnet56(),
          "ResNet-56, 32x32x3 input, 30 units: stem, 27 basic blocks, avgpool, fc")
    for b in (12, 16):
        layers, inb, outb = gpt2_small(b)
        write(os.path.join(out, f"gpt2_small_b{b}.toml"), f"gpt2_small_b{b}", inb, outb, layers,
              f"GPT-2 small, batch {b}, sequence 64, hidden 768, 12 transformer blocks")


if __name__ == "__main__":
    main()
