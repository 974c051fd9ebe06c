import pytest

from regembed.data import RELATION_LABELS, write_embedding_file, write_sentence_file
from regembed.synthetic import make_task

ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def write_task_files(directory, task, dim=50):
    train = directory / "train.tsv"
    val = directory / "val.tsv"
    emb = directory / "emb.txt"
    write_sentence_file(train, [(RELATION_LABELS[y], t) for y, t in task.train])
    write_sentence_file(val, [(RELATION_LABELS[y], t) for y, t in task.val])
    write_embedding_file(emb, task.vectors)
    return train, val, emb


@pytest.fixture
def tiny_files(tmp_path):
    """Small relation task on disk plus a matching config file."""
    task = make_task(30, 20, dim=8, seed=11)
    train, val, emb = write_task_files(tmp_path, task)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# tiny synthetic run\n"
        "task = relation\n"
        f"train_path = {train}\n"
        f"val_path = {val}\n"
        f"embeddings_path = {emb}\n"
        "embed_dim = 8\n"
        "hidden_dim = 6\n"
        "epochs = 3\n"
        "seeds = 0, 1\n"
        f"out = {tmp_path / 'out'}\n"
    )
    return cfg
