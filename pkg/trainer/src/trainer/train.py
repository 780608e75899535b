"""The float model: a small 1-D CNN for eight-way emotion classification.

Architecture and optimizer follow the classic recipe for this task: two
same-padded width-5 convolutional blocks of 128 filters with relu and
dropout 0.1, average pooling 4 after the first block, then a dense softmax
head, trained with RMSprop at learning rate 0.00005 (rho 0.9).  Dropout
and softmax exist only at training time; inference uses the bare chain.
"""

import numpy as np

EPOCHS = 500
BATCH_SIZE = 16
LEARNING_RATE = 0.00005
RHO = 0.9


def build_model(input_len=40, classes=8, filters=128, kernel=5, pool=4,
                dropout=0.1):
    import keras
    from keras import layers
    model = keras.Sequential([
        keras.Input(shape=(input_len, 1)),
        layers.Conv1D(filters, kernel, padding="same"),
        layers.Activation("relu"),
        layers.Dropout(dropout),
        layers.AveragePooling1D(pool_size=pool),
        layers.Conv1D(filters, kernel, padding="same"),
        layers.Activation("relu"),
        layers.Dropout(dropout),
        layers.Flatten(),
        layers.Dense(classes),
        layers.Activation("softmax"),
    ])
    opt = keras.optimizers.RMSprop(learning_rate=LEARNING_RATE, rho=RHO)
    model.compile(optimizer=opt, loss="sparse_categorical_crossentropy",
                  metrics=["accuracy"])
    return model


def train_model(dataset, seed, epochs=EPOCHS, batch_size=BATCH_SIZE,
                model=None, verbose=0):
    """Fit on the train split, report held-out accuracy.

    Returns (model, report) where report carries train and test accuracy.
    Determinism is best-effort: seeds are pinned and op determinism is
    requested from the framework.
    """
    import keras
    import tensorflow as tf
    keras.utils.set_random_seed(int(seed))
    try:
        tf.config.experimental.enable_op_determinism()
    except Exception:
        pass
    if model is None:
        model = build_model(input_len=dataset.vectors.shape[1],
                            classes=len(dataset.label_names))
    x = dataset.vectors[:, :, None].astype(np.float32)
    y = dataset.labels
    tr, te = dataset.train_idx, dataset.test_idx
    if tr.size == 0:
        raise ValueError("training split is empty")
    model.fit(x[tr], y[tr], epochs=int(epochs), batch_size=int(batch_size),
              verbose=verbose)
    _, train_acc = model.evaluate(x[tr], y[tr], verbose=0)
    test_acc = None
    if te.size:
        _, test_acc = model.evaluate(x[te], y[te], verbose=0)
    return model, {"train_accuracy": float(train_acc),
                   "test_accuracy": None if test_acc is None
                   else float(test_acc)}


def save_weights(model, path):
    model.save_weights(path)


def load_weights(path, **build_kwargs):
    model = build_model(**build_kwargs)
    model.load_weights(path)
    return model
