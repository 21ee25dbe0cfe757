"""Declarative description of a baseline or simplified model assembly."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..errors import SpecError

FAMILIES = ("HRED", "RNET")
VARIANTS = ("baseline", "simplified")

HRED_LAYERS = ("sentence", "dialogue", "decoder")
RNET_LAYERS = ("char", "encoding", "matching", "self_matching")


@dataclass(frozen=True)
class ModelSpec:
    """Sizes and variant of one HRED or R-NET assembly.

    ``layer_sizes`` keys are ``sentence``/``dialogue``/``decoder`` for HRED and
    ``char``/``encoding``/``matching``/``self_matching`` for R-NET. ``char`` is
    the per-direction width of the character-level encoder, so character
    embeddings of a word are ``2 * char`` wide in both variants.
    """

    family: str
    variant: str
    vocab_size: int
    embed_size: int
    layer_sizes: dict = field(default_factory=dict)
    alpha: float = 0.9
    char_vocab_size: int = 0
    char_embed_size: int = 0
    attention_size: int = 0
    train_word_embeddings: bool = True
    bias: bool = False

    def __post_init__(self):
        fam, var = str(self.family).upper(), str(self.variant).lower()
        if fam not in FAMILIES:
            raise SpecError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if var not in VARIANTS:
            raise SpecError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "variant", var)
        object.__setattr__(self, "layer_sizes", dict(self.layer_sizes))
        need = HRED_LAYERS if fam == "HRED" else RNET_LAYERS
        missing = [k for k in need if k not in self.layer_sizes]
        if missing:
            raise SpecError(f"{fam} spec lacks layer sizes for {missing}")
        if any(int(self.layer_sizes[k]) < 1 for k in need):
            raise SpecError("layer sizes must be positive")
        if self.vocab_size < 5 or self.embed_size < 1:
            raise SpecError("vocab_size must exceed the 4 reserved ids and embed_size must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise SpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        if fam == "HRED" and var == "simplified" and self.layer_sizes["sentence"] != self.embed_size:
            raise SpecError(
                "simplified HRED sentence encoder is FOFE, whose width is the embedding width: "
                f"sentence size {self.layer_sizes['sentence']} != embed size {self.embed_size}"
            )
        if fam == "RNET" and (self.char_vocab_size < 2 or self.char_embed_size < 1):
            raise SpecError("R-NET needs char_vocab_size >= 2 and char_embed_size >= 1")

    @property
    def simplified(self) -> bool:
        return self.variant == "simplified"

    @property
    def attn(self) -> int:
        return self.attention_size or (
            self.layer_sizes["encoding"] if self.family == "RNET" else self.layer_sizes["dialogue"]
        )

    def layer_kinds(self) -> dict[str, str]:
        s = self.simplified
        if self.family == "HRED":
            return {
                "sentence_encoder": "FOFE" if s else "GRU",
                "dialogue_encoder": "SGU" if s else "GRU",
                "decoder": "GRU",
            }
        return {
            "char_encoder": "BiFOFE" if s else "BiGRU",
            "encoding": "BiSGU" if s else "BiGRU",
            "matching": "BiGRU",
            "self_matching": "BiGRU",
            "pointer": "GRU",
        }

    def with_variant(self, variant: str) -> "ModelSpec":
        return replace(self, variant=variant)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)

    @classmethod
    def hred(cls, vocab_size, embed_size, sentence, dialogue, decoder, variant="baseline", alpha=0.9, **kw):
        sizes = {"sentence": sentence, "dialogue": dialogue, "decoder": decoder}
        return cls("HRED", variant, vocab_size, embed_size, sizes, alpha=alpha, **kw)

    @classmethod
    def rnet(cls, vocab_size, embed_size, char, encoding, matching, self_matching, *,
             char_vocab_size, char_embed_size, variant="baseline", alpha=0.7,
             train_word_embeddings=False, **kw):
        sizes = {"char": char, "encoding": encoding, "matching": matching, "self_matching": self_matching}
        return cls("RNET", variant, vocab_size, embed_size, sizes, alpha=alpha,
                   char_vocab_size=char_vocab_size, char_embed_size=char_embed_size,
                   train_word_embeddings=train_word_embeddings, **kw)
