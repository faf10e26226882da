"""Shared source/target vocabulary with fixed reserved ids."""

from __future__ import annotations

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
SEP_TOKEN = "[SEP]"
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>", SEP_TOKEN)


class Vocabulary:
    """Bijective token<->id maps; ids 0..4 are PAD, BOS, EOS, UNK, [SEP]."""

    def __init__(self, tokens):
        """tokens: full id-ordered token list, reserved entries first."""
        tokens = list(tokens)
        if tuple(tokens[:5]) != RESERVED:
            raise ValueError(f"vocabulary must start with reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.id_to_token = tokens
        self.token_to_id = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        """Map tokens to ids; unknown tokens map to UNK."""
        get = self.token_to_id.get
        return [get(tok, UNK) for tok in tokens]

    def decode(self, ids):
        table = self.id_to_token
        return [table[i] for i in ids]

    def encode_extended(self, tokens):
        """Encode with temporary ids past the vocabulary for unknown tokens.

        Returns (extended_ids, oov_tokens) where the i-th distinct unknown
        token receives id len(vocab) + i. Used by the copy mechanism so
        source-only words stay addressable in the output distribution.
        """
        ids, oov = [], []
        base = len(self.id_to_token)
        seen = {}
        for tok in tokens:
            known = self.token_to_id.get(tok)
            if known is not None:
                ids.append(known)
                continue
            ext = seen.get(tok)
            if ext is None:
                ext = base + len(oov)
                seen[tok] = ext
                oov.append(tok)
            ids.append(ext)
        return ids, oov

    def decode_extended(self, ids, oov_tokens):
        """Decode ids, mapping extended ids back to their source surface forms."""
        base = len(self.id_to_token)
        out = []
        for i in ids:
            if i < base:
                out.append(self.id_to_token[i])
            elif i - base < len(oov_tokens):
                out.append(oov_tokens[i - base])
            else:
                raise ValueError(f"id {i} outside extended vocabulary")
        return out

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        return cls(tokens)
