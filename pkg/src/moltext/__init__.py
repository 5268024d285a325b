"""moltext: molecule/text translation with knowledge-augmented prompting.

The package turns a natural-language molecule description into a SMILES
string (and back) by prompting a text-only language model with retrieved
demonstrations, fusing the model's ranked candidates with text embeddings
through a two-layer multi-head attention stack, and decoding the result
character by character with a small transformer trained on a hand-rolled
reverse-mode tape.  Everything runs offline against stub or replayed
providers; live HTTP access is an opt-in.
"""

__version__ = "0.1.0"

__all__ = ["CrossModalGenerator", "__version__"]


def __getattr__(name):
    # The estimator pulls in the whole stack; import it on first use so
    # light consumers (metrics only, say) do not pay for it.
    if name == "CrossModalGenerator":
        from moltext.model import CrossModalGenerator

        return CrossModalGenerator
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
