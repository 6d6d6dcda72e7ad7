import os
import string

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")

VOCAB = (["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
         + list(string.ascii_lowercase)
         + [f"##{c}" for c in string.ascii_lowercase]
         + ["the", "a", "movie", "film", "was", "is", "and", "of", "good",
            "bad", "great", "dull", "plot", "story", "acting", "very",
            "quite", "slow", "fast", "fun", "boring", "##ing", "##ly",
            "##ed", "##s", "."])


def build_model_dir(path, num_layers):
    """Deterministic local encoder directory (weights + WordPiece vocab)."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    os.makedirs(path, exist_ok=True)
    vocab_path = os.path.join(path, "vocab.txt")
    with open(vocab_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(VOCAB) + "\n")
    torch.manual_seed(1234)
    cfg = BertConfig(vocab_size=len(VOCAB), hidden_size=768,
                     num_hidden_layers=num_layers, num_attention_heads=12,
                     intermediate_size=3072, max_position_embeddings=128)
    model = BertModel(cfg)
    model.eval()
    model.save_pretrained(path)
    BertTokenizer(vocab_path, do_lower_case=True).save_pretrained(path)
    return path


@pytest.fixture(scope="session")
def small_model_dir(tmp_path_factory):
    return build_model_dir(str(tmp_path_factory.mktemp("enc2")), 2)


@pytest.fixture(scope="session")
def base_model_dir(tmp_path_factory):
    # the real default is the hub's 12-layer/768/12-head base model; this is
    # the same topology built locally because the sandbox has no hub access
    return build_model_dir(str(tmp_path_factory.mktemp("enc12")), 12)


def write_sentences(path, lines):
    with open(path, "w", encoding="latin-1") as fh:
        for line in lines:
            fh.write(line + "\n")
    return str(path)
