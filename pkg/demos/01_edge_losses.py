"""
One-sided edge losses on small hand-made maps
=============================================

Edge preservation punishes edges that get weaker, edge introduction punishes
edges that appear. Both ignore changes in the other direction.
"""

import torch

from structgan import edge_introduction_loss, edge_preservation_loss

# a 2x2 reference with an edge along the top row
ref = torch.tensor([[1.0, 1.0], [0.0, 0.0]])

# losing the edge entirely costs the masked squared error (2) times the
# fraction of non-edge pixels (1/2)
print("preservation, edge lost:   ", edge_preservation_loss(ref, torch.zeros(2, 2)).item())

# making every pixel an edge costs nothing here...
print("preservation, all edges:   ", edge_preservation_loss(ref, torch.ones(2, 2)).item())

# ...but the introduction loss sees the new edges in the bottom row,
# scaled by the edge density of the reference
print("introduction, all edges:   ", edge_introduction_loss(ref, torch.ones(2, 2)).item())

# sparse references weigh each missing edge more than dense ones
sparse = torch.zeros(8, 8)
sparse[0, 0] = 1
dense = torch.ones(8, 8)
print("sparse ref, edge lost:     ", edge_preservation_loss(sparse, torch.zeros(8, 8)).item())
print("dense ref, one edge lost:  ",
      edge_preservation_loss(dense, torch.where(sparse > 0, 0.0, 1.0)).item())
