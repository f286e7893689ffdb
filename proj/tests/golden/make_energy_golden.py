# Regenerates the energy golden files from the accounting formulas alone.
E_MAC, E_AC = 4.6, 0.9

def report(layers, T):
    lines = ["# cmsf energy report v1",
             "# flops: one multiply-accumulate per unit; spiking rows per time step",
             f"# e_mac_pj=4.6 e_ac_pj=0.9 T={T}",
             "name,kind,flops,rate,sops,picojoules"]
    ac = mac = 0; pj = 0.0
    for name, kind, flops, rate in layers:
        s = round(T * rate * flops) if kind == "spiking" else 0
        e = E_AC * s if kind == "spiking" else E_MAC * flops if kind == "float" else 0.0
        ac += s; mac += flops if kind == "float" else 0; pj += e
        lines.append(f"{name},{kind},{flops},{rate:.6f},{s},{e:.3f}")
    lines += [f"total_ac_ops={ac}", f"total_mac_ops={mac}", f"total_picojoules={pj:.3f}",
              f"total_millijoules={pj*1e-9:.9f}", f"ac_fraction={(ac/(ac+mac) if ac+mac else 0):.6f}"]
    return "\n".join(lines) + "\n"

# Per-layer table: N=4 tokens, D=8, gate width 8, T=2.
N, D, H, T = 4, 8, 8, 2
table = [("region.linear", "float", 1000, 1.0),
         ("region.qkv", "spiking", 3 * N * D * D, 0.25),
         ("region.attention", "spiking", 2 * N * N * D, 0.5),
         ("region.out_linear", "spiking", N * D * D, 0.125),
         ("region.gate_linear", "spiking", 2 * N * D * H, 0.75),
         ("region.gate_multiply", "mask", N * H * T, 0.5),
         ("region.mlp_out", "float", N * H * D * T, 1.0),
         ("word.linear", "float", 800, 1.0)]
open("layer_table.txt", "w").write(report(table, T))

# Zero-input pass of a model with d_region=6, d_word=5, D=8, T=2, B=2, N=4, L=3.
B = 2
def encoder(p, K, d_raw):
    rows = B * K
    attn = B * min(2 * K * K * D, 2 * K * D * D)
    return [(p + "linear", "float", rows * d_raw * D, 1.0),
            (p + "qkv", "spiking", 3 * rows * D * D, 0.0),
            (p + "attention", "spiking", attn, 0.0),
            (p + "out_linear", "spiking", rows * D * D, 0.0),
            (p + "gate_linear", "spiking", 2 * rows * D * D, 0.0),
            (p + "gate_multiply", "mask", rows * D * T, 0.0),
            (p + "mlp_out", "float", rows * D * D * T, 1.0)]
open("zero_input_model.txt", "w").write(report(encoder("region.", 4, 6) + encoder("word.", 3, 5), T))
