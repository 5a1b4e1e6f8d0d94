"""Semi-supervised condition diagnosis for distribution switchgear."""
