"""ECG arrhythmia classification with an auxiliary-classifier GAN on dual-beat coupling matrices."""
__version__ = "0.1.0"
