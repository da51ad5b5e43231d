"""m2d: music-to-dance translation as phrase-wise retrieval.

Pipeline: segment songs into beat-aligned music phrases, pretrain a music
encoder on three self-supervised pretext tasks, fine-tune an attention
predictor over a dance-phrase library, then refine semi-supervisedly with a
co-ascending transition matrix.
"""

__version__ = "0.1.0"

SCHEMA = "m2d/1"
