# Walk a small board through a stream of candidates to see selective competition at work.
from pathdistill.board import Board, BoardEntry, try_insert

board = Board([BoardEntry((0,), 0.50, 300), BoardEntry((1,), 0.40, 350), BoardEntry((2,), 0.70, 200)],
              flops_min=100, flops_max=400)

candidates = [
    BoardEntry((3,), 0.45, 320),  # beats entry 1 on both axes
    BoardEntry((4,), 0.90, 500),  # accurate but over budget
    BoardEntry((5,), 0.60, 250),  # dominates entries 0 and 3; the weaker one goes
    BoardEntry((2,), 0.99, 100),  # already on the board
    BoardEntry((6,), 0.10, 150),  # cheap but worse than everything
]
for cand in candidates:
    res = try_insert(board, cand)
    print(f"candidate {cand.path[0]} acc={cand.accuracy:.2f} flops={cand.flops}: {res}")
    for e in board.entries:
        print(f"    {e.path[0]}  acc={e.accuracy:.2f} flops={e.flops}")
