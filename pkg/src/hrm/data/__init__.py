"""Puzzle generation, grading, augmentation and tokenization."""

from .arc import ArcExample, ArcTransform, arc_augment, arc_invert, arc_vote, load_arc_dir
from .datasets import DatasetSplit, build_split, read_jsonl, write_jsonl
from .maze import MazeInstance, maze_bfs, maze_check, maze_generate
from .sudoku import (SudokuPuzzle, SudokuTransform, sudoku_augment, sudoku_canonical_key,
                     sudoku_generate, sudoku_solve)
from .tokens import PAD, TokenDataset, TokenExample, detokenize, tokenize

__all__ = [
    "ArcExample", "ArcTransform", "arc_augment", "arc_invert", "arc_vote", "load_arc_dir",
    "DatasetSplit", "build_split", "read_jsonl", "write_jsonl",
    "MazeInstance", "maze_bfs", "maze_check", "maze_generate",
    "SudokuPuzzle", "SudokuTransform", "sudoku_augment", "sudoku_canonical_key",
    "sudoku_generate", "sudoku_solve",
    "PAD", "TokenDataset", "TokenExample", "detokenize", "tokenize",
]
