"""Generate the tiny CLIP-shaped ONNX fixture used by the interchange-backend tests.

Writes config.json, text.onnx, image.onnx and expected.json (reference outputs
computed by torch) into the directory given as argv[1].

The graphs follow the interchange signatures documented in the README:
  text.onnx   input_ids int64 [B, L]                     -> text_embedding [B, E]
  image.onnx  patches f32 [P, 3*ps*ps], keep int64 [B, N] -> image_embedding [B, E],
                                                            patch_tokens [B, N, E]
"""
import json
import math
import sys

import torch
from torch import nn
from torch.onnx._internal.torchscript_exporter import onnx_proto_utils

# The exporter only needs the `onnx` package to splice custom functions; none are used here.
onnx_proto_utils._add_onnxscript_fn = lambda model_bytes, _opsets: model_bytes

RES, PATCH, WIDTH, TWIDTH, EMBED, HEADS, LAYERS, CTX, VOCAB = 32, 8, 16, 16, 12, 2, 2, 16, 259
GRID = RES // PATCH
SOT, EOT = 256, 257


class Block(nn.Module):
    def __init__(self, width, heads, causal):
        super().__init__()
        self.ln_1 = nn.LayerNorm(width)
        self.ln_2 = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.fc = nn.Linear(width, 4 * width)
        self.proj = nn.Linear(4 * width, width)
        self.heads = heads
        self.causal = causal

    def attn(self, x):
        b, n, w = x.shape
        hd = w // self.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.reshape(b, n, self.heads, hd).transpose(1, 2)
        k = k.reshape(b, n, self.heads, hd).transpose(1, 2)
        v = v.reshape(b, n, self.heads, hd).transpose(1, 2)
        logits = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if self.causal:
            mask = torch.ones(n, n, dtype=torch.bool).triu(1)
            logits = logits.masked_fill(mask, float("-inf"))
        a = logits.softmax(dim=-1) @ v
        return self.out(a.transpose(1, 2).reshape(b, n, w))

    def forward(self, x):
        x = x + self.attn(self.ln_1(x))
        h = self.fc(self.ln_2(x))
        h = h * torch.sigmoid(1.702 * h)
        return x + self.proj(h)


class Image(nn.Module):
    def __init__(self):
        super().__init__()
        self.embed = nn.Linear(3 * PATCH * PATCH, WIDTH, bias=False)
        self.cls = nn.Parameter(torch.randn(WIDTH) * 0.5)
        self.pos = nn.Parameter(torch.randn(GRID * GRID + 1, WIDTH) * 0.5)
        self.ln_pre = nn.LayerNorm(WIDTH)
        self.blocks = nn.ModuleList([Block(WIDTH, HEADS, False) for _ in range(LAYERS)])
        self.ln_post = nn.LayerNorm(WIDTH)
        self.proj = nn.Parameter(torch.randn(WIDTH, EMBED) / math.sqrt(WIDTH))

    def forward(self, patches, keep):
        tokens = self.embed(patches) + self.pos[1:]
        kept = tokens[keep]
        b = keep.shape[0]
        cls = (self.cls + self.pos[0]).reshape(1, 1, WIDTH).expand(b, 1, WIDTH)
        x = self.ln_pre(torch.cat([cls, kept], dim=1))
        for blk in self.blocks:
            x = blk(x)
        x = self.ln_post(x) @ self.proj
        return x[:, 0], x[:, 1:]


class Text(nn.Module):
    def __init__(self):
        super().__init__()
        self.tok = nn.Embedding(VOCAB, TWIDTH)
        self.pos = nn.Parameter(torch.randn(CTX, TWIDTH) * 0.5)
        self.blocks = nn.ModuleList([Block(TWIDTH, HEADS, True) for _ in range(LAYERS)])
        self.ln_final = nn.LayerNorm(TWIDTH)
        self.proj = nn.Parameter(torch.randn(TWIDTH, EMBED) / math.sqrt(TWIDTH))

    def forward(self, input_ids):
        x = self.tok(input_ids) + self.pos
        for blk in self.blocks:
            x = blk(x)
        x = self.ln_final(x)
        eot = input_ids.argmax(dim=-1)
        pooled = x[torch.arange(x.shape[0]), eot]
        return pooled @ self.proj


def byte_tokens(text):
    ids = [SOT] + list(text.encode("utf-8")) + [EOT]
    assert len(ids) <= CTX, text
    return ids + [0] * (CTX - len(ids))


def patchify(img):
    # img [3, RES, RES] -> [GRID*GRID, 3*PATCH*PATCH], channel-major within a patch
    p = img.reshape(3, GRID, PATCH, GRID, PATCH).permute(1, 3, 0, 2, 4)
    return p.reshape(GRID * GRID, 3 * PATCH * PATCH)


def main(out):
    torch.manual_seed(7)
    image, text = Image().eval(), Text().eval()
    patches = torch.randn(GRID * GRID, 3 * PATCH * PATCH)
    keep = torch.arange(GRID * GRID).reshape(1, -1)
    ids = torch.tensor([byte_tokens("flawless cup.")])
    torch.onnx.export(
        image, (patches, keep), f"{out}/image.onnx", dynamo=False, opset_version=17,
        input_names=["patches", "keep"], output_names=["image_embedding", "patch_tokens"],
        dynamic_axes={"keep": {0: "batch", 1: "kept"}, "image_embedding": {0: "batch"},
                      "patch_tokens": {0: "batch", 1: "kept"}},
    )
    torch.onnx.export(
        text, (ids,), f"{out}/text.onnx", dynamo=False, opset_version=17,
        input_names=["input_ids"], output_names=["text_embedding"],
        dynamic_axes={"input_ids": {0: "batch"}, "text_embedding": {0: "batch"}},
    )
    config = {
        "input_resolution": RES, "patch_size": PATCH, "grid": [GRID, GRID],
        "d_image": WIDTH, "d_text": TWIDTH, "embed_dim": EMBED,
        "tokenizer": {"kind": "byte", "context_length": CTX, "sot": SOT, "eot": EOT, "pad": 0},
        "opset": 17, "source": "tiny-fixture",
    }
    with open(f"{out}/config.json", "w") as f:
        json.dump(config, f, indent=2)

    torch.manual_seed(11)
    img = torch.randn(3, RES, RES)
    pt = patchify(img)
    windows = [[0, 1, 4, 5], [10, 11, 14, 15]]
    with torch.no_grad():
        full_emb, full_tok = image(pt, torch.arange(GRID * GRID).reshape(1, -1))
        win_emb, _ = image(pt, torch.tensor(windows))
        prompts = ["flawless cup.", "damaged bottle"]
        txt = text(torch.tensor([byte_tokens(p) for p in prompts]))
    expected = {
        "image": img.flatten().tolist(),
        "global": full_emb[0].tolist(),
        "patch_tokens": full_tok[0].tolist(),
        "windows": windows,
        "window_embeddings": win_emb.tolist(),
        "prompts": prompts,
        "text": txt.tolist(),
    }
    with open(f"{out}/expected.json", "w") as f:
        json.dump(expected, f)


if __name__ == "__main__":
    main(sys.argv[1])
