"""Compositional spatial image retrieval engine.

Queries are canvases of class-labeled boxes. Each canvas becomes a C x N x N
grid tensor of pooled appearance vectors, a spatial encoder flattens it into
a unit-norm search embedding, and corpora are ranked by L2 distance, either
exactly or through a compressed coarse-plus-residual product-quantization
index. The evaluation module scores rankings with geometric relevance, mAP,
NDCG, and P@k.
"""

from .canvas import (
    Annotation,
    BBox,
    CanvasError,
    DatasetManifest,
    ManifestRecord,
    ObjectPlacement,
    QueryCanvas,
    iou,
    load_manifest,
    overlap_count_field,
    save_manifest,
    validate_canvas,
)
from .encoder import (
    EncoderWeights,
    bypass_forward,
    conv2d,
    encoder_forward,
    init_weights,
    load_weights,
    save_weights,
)
from .features import (
    ClassEmbeddingTable,
    embed_class,
    load_embedding_table,
    save_embedding_table,
    synthetic_table,
)
from .index import (
    IndexConfig,
    PQIndex,
    RetrievalResult,
    build_index,
    deserialize,
    exact_search,
    fit_pca,
    kmeans,
    recall_at_k,
    search,
    serialize,
)
from .losses import ce_loss, contrastive_loss, sim_loss, total_loss
from .metrics import (
    EvalConfig,
    EvalReport,
    average_precision,
    binarize,
    evaluate_run,
    gain,
    ndcg,
    precision_at_k,
    relevance,
)
from .pipeline import (
    EncoderSetup,
    corpus_embeddings,
    embed_canvas,
    embed_source,
    generate_synthetic_manifest,
)
from .tensor import (
    TensorConfig,
    build_query_tensor,
    build_query_tensor_reference,
    maxpool_to_grid,
)

__version__ = "0.1.0"
